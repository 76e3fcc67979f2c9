"""Leapfrog finite-volume solver for the Neumann cavity problem on Omega minus D.

Cells are cubes of side h on a padded bounding box of Omega.  A cell is
*fluid* when its centre lies in Omega and outside closure(D), *obstacle* when
its centre lies in closure(D), and *exterior* otherwise.  The update is

    u^{n+1} = 2 u^n - u^{n-1} + dt^2 (L u^n / h^2 + G^n / h)

where L sums (u_nb - u_c) over open fluid-fluid faces and G sums the
prescribed outward flux over the faces a fluid cell shares with an exterior
cell.  Faces shared with obstacle cells carry no flux, which is the
homogeneous Neumann condition on the staircase version of the obstacle.

The outer flux is the analytic datum evaluated at the face centre with the
face's own axis normal.  When D is empty the continuum solution extends
smoothly past the staircase, so this choice makes the staircase problem
exact and leaves only the O(h^2) interior truncation error.

The boundary trace at a surface node is read by trilinear interpolation over
fluid cells and ghost cells; see :class:`TraceSampler`.
"""

from __future__ import annotations

import logging
import math
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage, sparse

from .geometry import (
    Array,
    BallSpec,
    BoxSpec,
    DomainSpec,
    GeometryError,
    SurfaceQuadrature,
    containment_margin,
    obstacle_balls,
)
from .reference_field import TimeGrid

log = logging.getLogger(__name__)

EXTERIOR, FLUID, OBSTACLE = 0, 1, 2
CFL_MARGIN = 0.05
_PAD = 2
_GROWTH_LIMIT = 1e6


class NumericalInstabilityError(RuntimeError):
    pass


@dataclass(frozen=True)
class GridSpec:
    """Cell-centred voxel grid; ``cells[i, j, k]`` holds EXTERIOR/FLUID/OBSTACLE."""

    h: float
    origin: Array  # centre of cell (0, 0, 0)
    cells: np.ndarray
    omega: DomainSpec
    obstacle: DomainSpec | None = None

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.cells.shape

    @property
    def fluid(self) -> np.ndarray:
        return self.cells == FLUID

    @property
    def n_fluid(self) -> int:
        return int(np.count_nonzero(self.cells == FLUID))

    def centers(self, axis: int) -> Array:
        return self.origin[axis] + self.h * np.arange(self.shape[axis])

    def dt_max(self) -> float:
        return self.h / (np.sqrt(3.0) * (1.0 + CFL_MARGIN))

    def time_grid(self, T: float) -> TimeGrid:
        return TimeGrid.covering(T, self.dt_max())

    def cfl_ratio(self, dt: float) -> float:
        return dt * np.sqrt(3.0) / self.h


def build_grid(omega: DomainSpec, d: DomainSpec | None, resolution: int) -> GridSpec:
    """Voxelise Omega minus closure(D) with ``resolution`` cells across Omega's widest extent."""
    if not isinstance(omega, (BallSpec, BoxSpec)):
        raise GeometryError("the outer domain must be a ball or a box")
    if resolution < 8:
        raise GeometryError("resolution must be at least 8 cells")
    lo, hi = (np.asarray(b, dtype=float) for b in omega.bounds())
    h = float(np.max(hi - lo)) / resolution
    n = np.ceil((hi - lo) / h - 1e-9).astype(int) + 2 * _PAD
    # centre the box of cells on Omega
    origin = 0.5 * (lo + hi) - 0.5 * (n - 1) * h
    axes = [origin[k] + h * np.arange(n[k]) for k in range(3)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    cells = np.where(omega.contains(pts), FLUID, EXTERIOR).astype(np.int8)
    if d is not None:
        margin = containment_margin(omega, d)
        if margin < 2 * h:
            raise GeometryError(f"obstacle must keep >= 2 cells (2h = {2 * h:.4g}) from the outer boundary; margin is {margin:.4g}")
        in_d = _closed_contains(d, pts)
        cells[in_d] = OBSTACLE
    labels, count = ndimage.label(cells == FLUID)
    if count != 1:
        raise GeometryError(f"fluid region has {count} connected components; Omega minus D must be connected")
    return GridSpec(h, origin, cells, omega, d)


def _closed_contains(d: DomainSpec, pts: Array) -> np.ndarray:
    out = np.zeros(pts.shape[:-1], dtype=bool)
    for ball in obstacle_balls(d):
        diff = pts - np.asarray(ball.center)
        out |= np.einsum("...i,...i->...", diff, diff) <= ball.radius**2
    return out


# --------------------------------------------------------------------------
# Boundary faces and the discrete operator
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class _Faces:
    """Outer faces: fluid cell flat index, face centre and outward axis normal."""

    cell: np.ndarray
    centers: Array
    normals: Array


def _outer_faces(grid: GridSpec) -> _Faces:
    cells = grid.cells
    fluid = cells == FLUID
    ext = cells == EXTERIOR
    idx = np.arange(cells.size).reshape(cells.shape)
    cell_list, ctr, nrm = [], [], []
    for axis in range(3):
        for side in (-1, 1):
            nb_ext = np.zeros_like(fluid)
            src = [slice(None)] * 3
            dst = [slice(None)] * 3
            if side == 1:
                dst[axis], src[axis] = slice(0, -1), slice(1, None)
            else:
                dst[axis], src[axis] = slice(1, None), slice(0, -1)
            nb_ext[tuple(dst)] = ext[tuple(src)]
            sel = fluid & nb_ext
            ijk = np.argwhere(sel)
            c = grid.origin + grid.h * ijk
            c[:, axis] += 0.5 * side * grid.h
            n = np.zeros_like(c)
            n[:, axis] = side
            cell_list.append(idx[sel])
            ctr.append(c)
            nrm.append(n)
    return _Faces(np.concatenate(cell_list), np.concatenate(ctr), np.concatenate(nrm))


def _open_masks(grid: GridSpec) -> list[np.ndarray]:
    """Per axis, mask of faces between two fluid cells (shape reduced by one along the axis)."""
    fluid = grid.cells == FLUID
    out = []
    for axis in range(3):
        a = [slice(None)] * 3
        b = [slice(None)] * 3
        a[axis], b[axis] = slice(0, -1), slice(1, None)
        out.append(fluid[tuple(a)] & fluid[tuple(b)])
    return out


def _laplacian_sum(u: np.ndarray, masks: list[np.ndarray], out: np.ndarray) -> np.ndarray:
    """out = sum over open faces of (u_nb - u_c), no 1/h^2 factor."""
    out.fill(0.0)
    for axis, m in enumerate(masks):
        a = [slice(None)] * 3
        b = [slice(None)] * 3
        a[axis], b[axis] = slice(0, -1), slice(1, None)
        flux = np.diff(u, axis=axis)
        flux *= m
        out[tuple(a)] += flux
        out[tuple(b)] -= flux
    return out


def _gradient_pairs(u: np.ndarray, v: np.ndarray, masks: list[np.ndarray]) -> float:
    """sum over open faces of (du)(dv), the discrete <grad u, grad v> times h^2."""
    total = 0.0
    for axis, m in enumerate(masks):
        total += float(np.sum(np.diff(u, axis=axis) * np.diff(v, axis=axis) * m))
    return total


def discrete_energy(grid: GridSpec, u_new: np.ndarray, u_old: np.ndarray, dt: float) -> float:
    """Leapfrog-conserved energy at the half step between ``u_old`` and ``u_new``."""
    masks = _open_masks(grid)
    kin = float(np.sum(((u_new - u_old) / dt) ** 2))
    pot = _gradient_pairs(u_new, u_old, masks) / grid.h**2
    return 0.5 * grid.h**3 * (kin + pot)


# --------------------------------------------------------------------------
# Trace sampling
# --------------------------------------------------------------------------


def _trilinear_matrix(grid: GridSpec, points: Array, usable: np.ndarray) -> sparse.csr_matrix:
    """Rows interpolate a cell field at ``points`` from cells flagged ``usable``.

    Unusable corners are dropped and the remaining weights renormalised; a
    point with no usable corner is an error.
    """
    s = (points - grid.origin) / grid.h
    base = np.floor(s).astype(int)
    frac = s - base
    shape = np.array(grid.shape)
    rows, cols, vals = [], [], []
    wsum = np.zeros(len(points))
    for corner in range(8):
        off = np.array([(corner >> k) & 1 for k in range(3)])
        ijk = base + off
        w = np.prod(np.where(off == 1, frac, 1.0 - frac), axis=1)
        inside = np.all((ijk >= 0) & (ijk < shape), axis=1)
        ok = inside.copy()
        ok[inside] = usable[tuple(ijk[inside].T)]
        ok &= w > 0
        rows.append(np.nonzero(ok)[0])
        cols.append(np.ravel_multi_index(tuple(ijk[ok].T), grid.shape))
        vals.append(w[ok])
        wsum[ok] += w[ok]
    if np.any(wsum <= 0):
        raise GeometryError("trace sampling point has no usable neighbour cell; increase resolution")
    rows = np.concatenate(rows)
    vals = np.concatenate(vals) / wsum[rows]
    return sparse.csr_matrix((vals, (rows, np.concatenate(cols))), shape=(len(points), grid.cells.size))


def _ghost_operators(grid: GridSpec, faces: _Faces) -> tuple[sparse.csr_matrix, sparse.csr_matrix, np.ndarray]:
    """Ghost values u_g = mean over its outer faces of (u_c + h g_face).

    Returns (M, B, ghost_mask) with u_ghost = M u + B g on the flat cell
    index space; rows of non-ghost cells are empty.
    """
    size = grid.cells.size
    h = grid.h
    ijk = np.array(np.unravel_index(faces.cell, grid.shape)).T
    ghost = np.ravel_multi_index(tuple((ijk + faces.normals.astype(int)).T), grid.shape)
    count = np.bincount(ghost, minlength=size).astype(float)
    inv = 1.0 / count[ghost]
    nf = len(faces.cell)
    M = sparse.csr_matrix((inv, (ghost, faces.cell)), shape=(size, size))
    B = sparse.csr_matrix((h * inv, (ghost, np.arange(nf))), shape=(size, nf))
    return M, B, (count > 0).reshape(grid.shape)


@dataclass(frozen=True)
class TraceSampler:
    """u(node) = C u_cells + F g_faces + c f_nodes for each surface node.

    ``method="ghost"``: trilinear interpolation at the node over fluid cells
    and exterior ghost cells, the latter mirrored across their outer faces
    with the prescribed flux (u_g = u_c + h g).  The node sits inside the
    interpolation stencil, so there is no systematic inward offset.

    ``method="normal"``: u(x - d n) + d f(x, t) with d = h, a one-sided
    alternative that uses fluid cells only.
    """

    cell_matrix: sparse.csr_matrix
    face_matrix: sparse.csr_matrix | None
    node_coeff: float

    @classmethod
    def build(cls, grid: GridSpec, quad: SurfaceQuadrature, faces: _Faces, method: str = "ghost") -> TraceSampler:
        fluid = grid.fluid
        if method == "normal":
            d = grid.h
            return cls(_trilinear_matrix(grid, quad.nodes - d * quad.normals, fluid), None, d)
        if method != "ghost":
            raise ValueError(f"unknown trace method {method!r}")
        M, B, ghost = _ghost_operators(grid, faces)
        A = _trilinear_matrix(grid, quad.nodes, fluid | ghost)
        sel = sparse.diags(fluid.ravel().astype(float))
        C = (A @ sel + A @ M).tocsr()
        return cls(C, (A @ B).tocsr(), 0.0)

    def __call__(self, u: np.ndarray, g_faces: Array, f_nodes: Array | None = None) -> Array:
        out = self.cell_matrix @ u.ravel()
        if self.face_matrix is not None:
            out += self.face_matrix @ g_faces
        if self.node_coeff and f_nodes is not None:
            out += self.node_coeff * f_nodes
        return out


# --------------------------------------------------------------------------
# Solve
# --------------------------------------------------------------------------


@dataclass
class SolverStats:
    steps: int = 0
    dt: float = 0.0
    h: float = 0.0
    cfl_ratio: float = 0.0
    max_field: float = 0.0
    fluid_cells: int = 0
    outer_faces: int = 0
    wall_seconds: float = 0.0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class BoundaryTrace:
    """u_f sampled at surface nodes; ``samples[n, k]`` is u at time n*dt, node k."""

    quadrature: SurfaceQuadrature
    samples: Array
    time_grid: TimeGrid
    eta: float = float("nan")
    p: tuple[float, float, float] = (float("nan"),) * 3

    def __post_init__(self) -> None:
        if self.samples.shape != (self.time_grid.n_steps + 1, len(self.quadrature)):
            raise ValueError("trace shape must be (n_steps + 1, nodes)")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("trace contains non-finite values")

    @property
    def T(self) -> float:
        return self.time_grid.T


@dataclass
class VolumeFields:
    """Laplace transforms of u per fluid cell plus the final-time state."""

    grid: GridSpec
    taus: Array
    w: Array  # (n_tau, n_fluid)
    u_T: Array  # (n_fluid,)
    ut_T: Array  # (n_fluid,)
    fluid_index: np.ndarray = field(repr=False)  # flat cell indices of fluid cells

    def as_grid(self, values: Array) -> np.ndarray:
        out = np.zeros(self.grid.cells.size)
        out[self.fluid_index] = values
        return out.reshape(self.grid.shape)


def laplace_weights(tau: float, time_grid: TimeGrid) -> Array:
    """Weights for int_0^T e^{-tau t} g(t) dt with g the piecewise-linear interpolant.

    Reduces to the trapezoid rule at tau = 0.  Exact weighting of the
    interpolant keeps the rule accurate when tau*dt is not small.
    """
    n, dt = time_grid.n_steps, time_grid.dt
    z = tau * dt
    if z < 0.05:
        # a = int_0^1 e^{-z s}(1 - s) ds = sum (-z)^k/(k+2)!, b = int_0^1 e^{-z s} s ds = sum (-z)^k (k+1)/(k+2)!
        k = np.arange(10)
        c = (-z) ** k / np.array([math.factorial(i + 2) for i in k])
        a, b = float(np.sum(c)), float(np.sum(c * (k + 1)))
    else:
        em1 = np.expm1(-z)
        a = (z + em1) / z**2
        b = (-em1 - z * (1.0 + em1)) / z**2
    decay = np.exp(-tau * dt * np.arange(n + 1))
    w = np.zeros(n + 1)
    w[:-1] += a * decay[:-1]
    w[1:] += b * decay[:-1]
    return dt * w


def solve(grid, neumann, time_grid, quadrature, **kw) -> tuple[BoundaryTrace, SolverStats]:
    """Forward solve; ``neumann`` has ``flux(points, normals, t)`` (e.g. TimeReversedNeumann)."""
    trace, _, stats = _run(grid, neumann, time_grid, quadrature, taus=None, **kw)
    return trace, stats


def solve_with_volume_output(
    grid, neumann, time_grid, quadrature, tau_list, memory_budget: float = 2e9, **kw
) -> tuple[BoundaryTrace, VolumeFields, SolverStats]:
    taus = np.atleast_1d(np.asarray(tau_list, dtype=float))
    if taus.size == 0:
        raise ValueError("tau_list must be non-empty")
    if np.any(taus < 0):
        raise ValueError("tau values must be non-negative")
    need = 8.0 * grid.n_fluid * (taus.size + 4)
    if need > memory_budget:
        raise MemoryError(f"volume output needs {need / 1e9:.2f} GB > budget {memory_budget / 1e9:.2f} GB")
    return _run(grid, neumann, time_grid, quadrature, taus=taus, **kw)


def _run(
    grid,
    neumann,
    time_grid,
    quadrature,
    taus=None,
    trace_method="ghost",
    snapshot_steps=(),
    snapshot_dir=None,
    eta=float("nan"),
    p=(float("nan"),) * 3,
):

    start = time.perf_counter()
    dt, nsteps = time_grid.dt, time_grid.n_steps
    if dt > grid.dt_max() * (1 + 1e-12):
        raise NumericalInstabilityError(
            f"CFL violated: dt={dt:.4g} > h/(sqrt(3)*{1 + CFL_MARGIN}) = {grid.dt_max():.4g}"
        )
    h = grid.h
    masks = _open_masks(grid)
    faces = _outer_faces(grid)
    sampler = TraceSampler.build(grid, quadrature, faces, trace_method)
    fluid_index = np.flatnonzero(grid.cells == FLUID)
    size = grid.cells.size

    def face_flux(t: float) -> Array:
        return neumann.flux(faces.centers, faces.normals, t)

    def forcing(g: Array) -> np.ndarray:
        return np.bincount(faces.cell, weights=g, minlength=size).reshape(grid.shape)

    def sample(u: np.ndarray, t: float, g: Array | None = None) -> Array:
        if g is None:
            g = face_flux(t)
        f = neumann.flux(quadrature.nodes, quadrature.normals, t) if sampler.node_coeff else None
        return sampler(u, g, f)

    times = time_grid.times()
    samples = np.empty((nsteps + 1, len(quadrature)))
    lap = np.zeros(grid.shape)
    c2 = dt * dt / (h * h)
    u_prev = np.zeros(grid.shape)
    gf = face_flux(0.0)
    g0 = forcing(gf)
    u = 0.5 * dt * dt * g0 / h
    samples[0] = sample(u_prev, 0.0, gf)
    gf = face_flux(times[1])
    samples[1] = sample(u, times[1], gf)
    scale = max(float(np.max(np.abs(g0))), 1e-300)

    if taus is not None:
        wts = np.stack([laplace_weights(t, time_grid) for t in taus])  # (n_tau, n+1)
        acc = np.zeros((len(taus), fluid_index.size))
        acc += wts[:, 1:2] * u.ravel()[fluid_index]

    max_field = float(np.max(np.abs(u)))
    u_before = u_prev
    for n in range(1, nsteps + 1):
        g = forcing(gf)
        scale = max(scale, float(np.max(np.abs(g))))
        _laplacian_sum(u, masks, lap)
        u_next = 2.0 * u - u_prev + c2 * lap + (dt * dt / h) * g
        u_next[grid.cells != FLUID] = 0.0
        u_before, u_prev, u = u_prev, u, u_next
        m = float(np.max(np.abs(u)))
        max_field = max(max_field, m)
        if not np.isfinite(m) or m > _GROWTH_LIMIT * max(scale, 1.0):
            raise NumericalInstabilityError(f"field grew to {m:.3g} at step {n} (cfl ratio {grid.cfl_ratio(dt):.3f})")
        if n < nsteps:
            gf = face_flux(times[n + 1])
            samples[n + 1] = sample(u, times[n + 1], gf)
            if taus is not None:
                acc += wts[:, n + 1 : n + 2] * u.ravel()[fluid_index]
        if snapshot_dir is not None and n + 1 in snapshot_steps:
            write_snapshot(Path(snapshot_dir) / f"snapshot_{n + 1:06d}.bin", grid, u, dt)
    # one step past T: u = u^{N+1}, u_prev = u^N, u_before = u^{N-1}
    stats = SolverStats(
        steps=nsteps,
        dt=dt,
        h=h,
        cfl_ratio=grid.cfl_ratio(dt),
        max_field=max_field,
        fluid_cells=int(fluid_index.size),
        outer_faces=int(faces.cell.size),
        wall_seconds=time.perf_counter() - start,
    )
    trace = BoundaryTrace(quadrature, samples, time_grid, float(eta), tuple(float(c) for c in p))
    if taus is None:
        return trace, None, stats
    u_T = u_prev.ravel()[fluid_index].copy()
    ut_T = (u.ravel()[fluid_index] - u_before.ravel()[fluid_index]) / (2.0 * dt)
    return trace, VolumeFields(grid, taus, acc, u_T, ut_T, fluid_index), stats


# --------------------------------------------------------------------------
# File formats
# --------------------------------------------------------------------------

SNAPSHOT_MAGIC = b"ENCSNAP1"
TRACE_MAGIC = b"ENCTRAC1"


def write_snapshot(path, grid: GridSpec, u: np.ndarray, dt: float) -> None:
    """Header: magic, nx ny nz (int64), h, dt, origin (float64); then float64 cells, x fastest."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<3q", *grid.shape))
        fh.write(struct.pack("<5d", grid.h, dt, *grid.origin))
        # x fastest means Fortran order for an (x, y, z) indexed array
        fh.write(np.asarray(u, dtype="<f8").ravel(order="F").tobytes())


def read_snapshot(path) -> tuple[np.ndarray, float, float, Array]:
    with open(path, "rb") as fh:
        if fh.read(8) != SNAPSHOT_MAGIC:
            raise ValueError(f"{path}: not a snapshot file")
        shape = struct.unpack("<3q", fh.read(24))
        h, dt, *origin = struct.unpack("<5d", fh.read(40))
        data = np.frombuffer(fh.read(), dtype="<f8")
    return data.reshape(shape, order="F"), h, dt, np.array(origin)


def write_trace(path, trace: BoundaryTrace) -> None:
    """Binary trace layout (little endian).

    magic(8) | n_nodes, n_levels (int64) | dt, T, eta, px, py, pz (float64)
    | nodes (n_nodes x 3) | normals (n_nodes x 3) | weights (n_nodes)
    | samples (n_levels x n_nodes, node index fastest)
    """
    q = trace.quadrature
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(TRACE_MAGIC)
        fh.write(struct.pack("<2q", len(q), trace.samples.shape[0]))
        fh.write(struct.pack("<6d", trace.time_grid.dt, trace.T, trace.eta, *trace.p))
        for arr in (q.nodes, q.normals, q.weights, trace.samples):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_trace(path) -> BoundaryTrace:
    with open(path, "rb") as fh:
        if fh.read(8) != TRACE_MAGIC:
            raise ValueError(f"{path}: not a trace file")
        n_nodes, n_levels = struct.unpack("<2q", fh.read(16))
        dt, T, eta, *p = struct.unpack("<6d", fh.read(48))
        data = np.frombuffer(fh.read(), dtype="<f8")
    expect = n_nodes * 7 + n_levels * n_nodes
    if data.size != expect:
        raise ValueError(f"{path}: truncated trace ({data.size} of {expect} values)")
    nodes = data[: 3 * n_nodes].reshape(n_nodes, 3).copy()
    normals = data[3 * n_nodes : 6 * n_nodes].reshape(n_nodes, 3).copy()
    weights = data[6 * n_nodes : 7 * n_nodes].copy()
    samples = data[7 * n_nodes :].reshape(n_levels, n_nodes).copy()
    tg = TimeGrid(n_levels - 1, dt)
    if abs(tg.T - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"{path}: horizon {T} inconsistent with dt * steps = {tg.T}")
    return BoundaryTrace(SurfaceQuadrature(nodes, normals, weights), samples, tg, eta, tuple(p))
