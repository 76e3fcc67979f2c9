"""The boundary indicator I(tau) and its volume decomposition.

Two reference modes are supported.  ``analytic`` compares the simulated
Laplace field with the exact w* of :mod:`reference_field`.  ``background``
compares it with the same solver run on Omega without the obstacle; in the
continuum that run reproduces w* exactly, so this is the same indicator with
the discretisation error of the reference cancelled.  The traces are
subtracted before the time transform: the two runs agree bit for bit until
the first echo, so nothing is lost to cancellation even where I is many
orders below w.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike

from . import analytic_waves as aw
from .forward_solver import (
    FLUID,
    OBSTACLE,
    BoundaryTrace,
    GridSpec,
    VolumeFields,
    _outer_faces,
    laplace_weights,
)
from .geometry import Array
from .reference_field import TimeReversedNeumann, w_star_at, w_star_boundary

FLOOR_FACTOR = 5.0
TABLE_COLUMNS = ("tau", "I", "inv_tau_log_I", "sign_scaled", "log_scaled")
_ROUNDING_SAFETY = 8.0


@dataclass(frozen=True)
class TauGrid:
    values: Array

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float).reshape(-1)
        if v.size == 0:
            raise ValueError("tau grid is empty")
        if np.any(v <= 0):
            raise ValueError("tau values must be positive")
        if np.any(np.diff(v) <= 0):
            raise ValueError("tau values must be strictly increasing")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def from_range(cls, lo: float, hi: float, count: int, spacing: str = "log") -> TauGrid:
        if count < 2 or not 0 < lo < hi:
            raise ValueError("need 0 < tau_min < tau_max and count >= 2")
        if spacing == "log":
            return cls(np.geomspace(lo, hi, count))
        if spacing == "linear":
            return cls(np.linspace(lo, hi, count))
        raise ValueError(f"tau spacing must be 'log' or 'linear', got {spacing!r}")

    def __len__(self) -> int:
        return self.values.size

    def __iter__(self):
        return iter(self.values)


@dataclass
class IndicatorSeries:
    tau: TauGrid
    I: Array
    T: float
    mode: str = "analytic"
    floor: Array | None = None
    floor_factor: float = FLOOR_FACTOR

    def __post_init__(self) -> None:
        self.I = np.asarray(self.I, dtype=float)
        if self.I.shape != self.tau.values.shape:
            raise ValueError("one indicator value per tau is required")

    @property
    def log_indicator(self) -> Array:
        """(1/tau) log I where I > 0, NaN elsewhere."""
        out = np.full(self.I.shape, np.nan)
        pos = self.I > 0
        out[pos] = np.log(self.I[pos]) / self.tau.values[pos]
        return out

    @property
    def scaled_sign(self) -> Array:
        return np.sign(self.I)

    @property
    def scaled_log(self) -> Array:
        """log |e^{tau T} I|, formed as log|I| + tau T; -inf where I = 0."""
        with np.errstate(divide="ignore"):
            return np.log(np.abs(self.I)) + self.tau.values * self.T

    @property
    def admissible(self) -> np.ndarray:
        """I > 0 and, when a floor is known, I >= floor_factor * floor."""
        ok = self.I > 0
        if self.floor is not None:
            ok &= np.abs(self.I) >= self.floor_factor * np.asarray(self.floor)
        return ok


# --------------------------------------------------------------------------
# Boundary indicator
# --------------------------------------------------------------------------


def laplace_trace(trace: BoundaryTrace, tau: float) -> Array:
    """w(node) = int_0^T e^{-tau t} u(node, t) dt from the stored trace."""
    return laplace_weights(tau, trace.time_grid) @ trace.samples


def _check_pair(trace: BoundaryTrace, other: BoundaryTrace) -> None:
    if not trace.quadrature.same_as(other.quadrature):
        raise ValueError("traces use different surface quadratures")
    if trace.time_grid != other.time_grid:
        raise ValueError("traces use different time grids")


def _pmap(fn, items, threads: int | None):
    if threads is None or threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def compute_indicator(
    trace: BoundaryTrace,
    pulse: aw.SourcePulse,
    tau_grid: TauGrid,
    T: float | None = None,
    reference: str = "analytic",
    background: BoundaryTrace | None = None,
    floor: ArrayLike | None = None,
    threads: int | None = None,
) -> IndicatorSeries:
    """I(tau) = sum_k q_k (w - w_ref)(x_k) dw*/dnu(x_k) over the surface nodes.

    ``reference="background"`` needs ``background``, a trace of the same
    pipeline without the obstacle.  ``floor`` (per tau) marks admissibility;
    see :func:`noise_floor`.
    """
    T = trace.T if T is None else float(T)
    if abs(T - trace.T) > 1e-9 * max(1.0, T):
        raise ValueError(f"trace horizon {trace.T} differs from T = {T}")
    if not np.all(np.isfinite(trace.samples)):
        raise ValueError("trace contains non-finite values")
    q = trace.quadrature
    if reference == "background":
        if background is None:
            raise ValueError("background reference needs a background trace")
        _check_pair(trace, background)
        diff = trace.samples - background.samples
    elif reference != "analytic":
        raise ValueError(f"unknown reference {reference!r}")

    def one(tau: float) -> float:
        ws, dn = w_star_boundary(pulse, q, tau, T)
        wt = laplace_weights(tau, trace.time_grid)
        if reference == "background":
            delta = wt @ diff
        else:
            delta = wt @ trace.samples - ws.values
        return float(q.integrate(delta * dn.values))

    values = np.array(_pmap(one, tau_grid.values, threads))
    fl = None if floor is None else np.asarray(floor, dtype=float)
    return IndicatorSeries(tau_grid, values, T, reference, fl)


def rounding_floor(
    trace: BoundaryTrace, background: BoundaryTrace, pulse: aw.SourcePulse, tau_grid: TauGrid
) -> Array:
    """Floating-point floor of the background-subtracted indicator.

    Rounding differences between the two runs can only appear once their
    fields diverge, so the bound integrates eps * |u| from the first time
    level at which the two traces differ anywhere.
    """
    _check_pair(trace, background)
    q = trace.quadrature
    differs = np.any(trace.samples != background.samples, axis=1)
    mag = np.abs(trace.samples) + np.abs(background.samples)
    if differs.any():
        mag[: int(np.argmax(differs))] = 0.0
    else:
        mag[:] = 0.0
    eps = np.finfo(float).eps
    out = []
    for tau in tau_grid.values:
        _, dn = w_star_boundary(pulse, q, tau, trace.T)
        wt = laplace_weights(tau, trace.time_grid)
        out.append(_ROUNDING_SAFETY * eps * float(q.integrate((wt @ mag) * np.abs(dn.values))))
    return np.array(out)


def noise_floor(
    background: BoundaryTrace,
    pulse: aw.SourcePulse,
    tau_grid: TauGrid,
    reference: str,
    trace: BoundaryTrace | None = None,
) -> Array:
    """Per-tau floor below which I is not trusted.

    ``analytic``: |I| of the obstacle-free run at the same resolution (its
    exact value is 0, so what remains is discretisation error).
    ``background``: that run is the reference itself, so its indicator is
    identically 0; the floor is the rounding bound of :func:`rounding_floor`.
    """
    if reference == "analytic":
        return np.abs(compute_indicator(background, pulse, tau_grid, reference="analytic").I)
    if trace is None:
        raise ValueError("the background floor needs the obstacle trace")
    return rounding_floor(trace, background, pulse, tau_grid)


def free_trace_error(background: BoundaryTrace, pulse: aw.SourcePulse) -> Array:
    """u_0 - v(x, T - t) at every stored level of an obstacle-free trace."""
    q, T = background.quadrature, background.T
    exact = np.zeros_like(background.samples)
    for n, t in enumerate(background.time_grid.times()):
        if T - t > 0:
            exact[n] = aw.v(pulse, q.nodes, T - t)
    return background.samples - exact


def discretization_floor(background: BoundaryTrace, pulse: aw.SourcePulse, tau_grid: TauGrid) -> Array:
    """sum_k q_k |L[u_0 - v](x_k)| |dw*/dnu(x_k)| from the obstacle-free trace error.

    Bounds the analytic-mode indicator of the obstacle-free run by the
    triangle inequality; it shrinks with h at the rate of the trace error.
    """
    err = free_trace_error(background, pulse)
    q = background.quadrature
    out = []
    for tau in tau_grid.values:
        _, dn = w_star_boundary(pulse, q, tau, background.T)
        wt = laplace_weights(tau, background.time_grid)
        out.append(float(q.integrate(np.abs(wt @ err) * np.abs(dn.values))))
    return np.array(out)


# --------------------------------------------------------------------------
# Table output
# --------------------------------------------------------------------------


def _fmt(x: float) -> str:
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "-inf" if x < 0 else "inf"
    return repr(float(x))


def write_table(series: IndicatorSeries, path) -> Path:
    """Comma-separated table with the fixed header ``TABLE_COLUMNS``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        for row in zip(series.tau.values, series.I, series.log_indicator, series.scaled_sign, series.scaled_log):
            w.writerow([_fmt(v) for v in row])
    return path


def write_floor_table(series: IndicatorSeries, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("tau", "floor", "admissible"))
        floor = series.floor if series.floor is not None else np.full(series.I.shape, np.nan)
        for t, f, a in zip(series.tau.values, floor, series.admissible):
            w.writerow([_fmt(t), _fmt(f), int(a)])
    return path


def read_table(path, T: float) -> IndicatorSeries:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if tuple(rows[0]) != TABLE_COLUMNS:
        raise ValueError(f"{path}: unexpected header {rows[0]}")
    data = np.array([[float(x) for x in r] for r in rows[1:]])
    return IndicatorSeries(TauGrid(data[:, 0]), data[:, 1], T)


# --------------------------------------------------------------------------
# Volume decomposition I = J* + E + script_R
# --------------------------------------------------------------------------


@dataclass
class Decomposition:
    tau: float
    J_star: float
    E: float
    script_R: float
    I_faces: float
    reference: str
    parts: dict = field(default_factory=dict)

    @property
    def I_reassembled(self) -> float:
        return self.J_star + self.E + self.script_R

    def as_dict(self) -> dict:
        return {
            "tau": self.tau,
            "J_star": self.J_star,
            "E": self.E,
            "script_R": self.script_R,
            "I_reassembled": self.I_reassembled,
            "I_faces": self.I_faces,
            "reference": self.reference,
            **self.parts,
        }


def _face_energy(a: np.ndarray, b: np.ndarray, mask_cells: np.ndarray, pair_rule: str) -> float:
    """Sum over faces of (da)(db); a face counts when its two cells satisfy ``pair_rule``.

    ``both``: both cells in ``mask_cells``; ``any``: at least one of them
    (the other must still be a valid cell, i.e. inside the grid mask).
    """
    total = 0.0
    for axis in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis], hi[axis] = slice(0, -1), slice(1, None)
        m0, m1 = mask_cells[tuple(lo)], mask_cells[tuple(hi)]
        m = (m0 & m1) if pair_rule == "both" else (m0 | m1)
        total += float(np.sum(np.diff(a, axis=axis) * np.diff(b, axis=axis) * m))
    return total


def _tau_index(vol: VolumeFields, tau: float) -> int:
    hit = np.nonzero(np.isclose(vol.taus, tau, rtol=1e-12, atol=0.0))[0]
    if hit.size == 0:
        raise ValueError(f"tau = {tau} was not accumulated by the volume solve (have {vol.taus})")
    return int(hit[0])


def boundary_face_integral(grid: GridSpec, pulse: aw.SourcePulse, T: float, tau: float, time_grid, cell_values: np.ndarray) -> float:
    """sum over outer staircase faces of h^2 a_c * L[g](tau), g the face flux."""
    faces = _outer_faces(grid)
    src = TimeReversedNeumann(pulse, T)
    wt = laplace_weights(tau, time_grid)
    g_hat = np.zeros(len(faces.cell))
    for w_n, t in zip(wt, time_grid.times()):
        if w_n != 0.0:
            g_hat += w_n * src.flux(faces.centers, faces.normals, t)
    return float(grid.h**2 * np.sum(cell_values.ravel()[faces.cell] * g_hat))


def compute_decomposition(
    vol: VolumeFields,
    pulse: aw.SourcePulse,
    tau: float,
    T: float,
    reference: str = "background",
    background: VolumeFields | None = None,
    time_grid=None,
) -> Decomposition:
    """Grid evaluation of J*, E and script_R at one tau.

    ``background``: w* is replaced by the obstacle-free Laplace field W and
    F0 by that run's dtu(T) + tau u(T).  These satisfy the discrete versions of
    the governing identities exactly in space, so the three terms sum to the
    staircase-face indicator up to time-stepping error.  J* then includes
    the faces between fluid and obstacle cells.
    ``analytic``: exact w*, its gradient and F0 = -Psi at cell centres.
    """
    grid = vol.grid
    if grid.obstacle is None:
        raise ValueError("the decomposition needs a grid with an obstacle")
    h = grid.h
    k = _tau_index(vol, tau)
    decay = math.exp(-tau * T)
    fluid = grid.cells == FLUID
    obst = grid.cells == OBSTACLE
    omega_cells = fluid | obst
    w = vol.as_grid(vol.w[k])
    F = vol.as_grid(vol.ut_T + tau * vol.u_T)

    if reference == "background":
        if background is None:
            raise ValueError("background decomposition needs the obstacle-free volume fields")
        if background.grid.shape != grid.shape or background.grid.h != h:
            raise ValueError("background grid does not match")
        W = background.as_grid(background.w[_tau_index(background, tau)])
        F0 = background.as_grid(background.ut_T + tau * background.u_T)
        R = np.where(fluid, w - W, 0.0)
        J = tau**2 * h**3 * float(np.sum(W[obst] ** 2)) + h * _face_energy(W, W, obst, "any")
    elif reference == "analytic":
        pts = np.stack(np.meshgrid(*(grid.centers(a) for a in range(3)), indexing="ij"), axis=-1)
        sel = omega_cells
        ws, gs = w_star_at(pulse, pts[sel], tau, T)
        W = np.zeros(grid.shape)
        W[sel] = ws
        G = np.zeros(grid.shape + (3,))
        G[sel] = gs
        F0 = np.where(sel, -aw.psi(pulse, pts), 0.0)
        R = np.where(fluid, w - W, 0.0)
        J = h**3 * float(np.sum(np.sum(G[obst] ** 2, axis=-1) + tau**2 * W[obst] ** 2))
    else:
        raise ValueError(f"unknown reference {reference!r}")

    E = tau**2 * h**3 * float(np.sum(R[fluid] ** 2)) + h * _face_energy(R, R, fluid, "both")
    r_d = h**3 * float(np.sum(F0[obst] * W[obst]))
    r_fr = h**3 * float(np.sum(F[fluid] * R[fluid]))
    r_f0 = h**3 * float(np.sum((F0[fluid] - F[fluid]) * W[fluid]))
    script_R = decay * (r_d + r_fr + r_f0)
    tg = time_grid if time_grid is not None else grid.time_grid(T)
    I_faces = boundary_face_integral(grid, pulse, T, tau, tg, R)
    parts = {"R_obstacle": decay * r_d, "R_fluid": decay * r_fr, "R_source": decay * r_f0}
    return Decomposition(float(tau), J, E, script_R, I_faces, reference, parts)
