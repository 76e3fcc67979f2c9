"""Time-reversed reference objects: Neumann data, w* and J*.

``w*(x, tau) = int_0^T exp(-tau t) v(x, T - t) dt`` is computed by composite
Gauss-Legendre in t with breakpoints at the region transitions of the free
wave, where v(x, T - t) has kinks.  On each piece the integrand is a cubic in
t times an exponential, so a fixed number of nodes per unit of ``tau * dt``
gives full double precision; an a-posteriori refinement check is optional.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike

from . import analytic_waves as aw
from .geometry import (
    Array,
    DomainSpec,
    SurfaceQuadrature,
    ball_volume_quadrature,
    check_containment,
    gauss_legendre,
    obstacle_balls,
    sup_radius,
)

_GL_NODES = 16
_TAU_DT_PER_PIECE = 3.0
_CHUNK = 16384


class AdmissibilityError(ValueError):
    """The observation time is too short for the time-reversal construction."""


@dataclass(frozen=True)
class TimeGrid:
    n_steps: int
    dt: float

    def __post_init__(self) -> None:
        if self.n_steps < 2:
            raise ValueError("a time grid needs at least 2 steps")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def T(self) -> float:
        return self.n_steps * self.dt

    def times(self) -> Array:
        return np.arange(self.n_steps + 1) * self.dt

    @classmethod
    def covering(cls, T: float, dt_max: float) -> TimeGrid:
        n = max(2, int(np.ceil(T / dt_max - 1e-12)))
        return cls(n, T / n)


@dataclass(frozen=True)
class BoundaryField:
    quadrature: SurfaceQuadrature
    values: Array

    def __post_init__(self) -> None:
        if self.values.shape[-1] != len(self.quadrature):
            raise ValueError("value array does not match the quadrature node count")


def check_admissible(omega: DomainSpec, pulse: aw.SourcePulse, T: float, strict: bool = False) -> float:
    """Margin T - eta - R_Omega(p); raises if the lacuna does not cover Omega at time T."""
    margin = T - pulse.eta - sup_radius(omega, pulse.p)
    ok = margin > 0 if strict else margin >= -1e-12
    if not ok:
        cond = "T - eta > R_Omega(p)" if strict else "T - eta >= R_Omega(p)"
        raise AdmissibilityError(f"{cond} violated: T={T}, eta={pulse.eta}, margin={margin:.6g}")
    return margin


class TimeReversedNeumann:
    """Neumann data f(x, t) = d/dn v(x, T - t), evaluable at any boundary point."""

    def __init__(self, pulse: aw.SourcePulse, T: float, scale: float = 1.0):
        self.pulse = pulse
        self.T = float(T)
        self.scale = float(scale)

    def flux(self, points: ArrayLike, normals: ArrayLike, t: float) -> Array:
        s = self.T - t
        if s <= 0:
            return np.zeros(np.shape(points)[:-1])
        return self.scale * aw.normal_derivative(self.pulse, points, normals, s)

    def value(self, points: ArrayLike, t: float) -> Array:
        s = self.T - t
        if s <= 0:
            return np.zeros(np.shape(points)[:-1])
        return self.scale * aw.v(self.pulse, points, s)


class ZeroNeumann:
    def flux(self, points: ArrayLike, normals: ArrayLike, t: float) -> Array:
        return np.zeros(np.shape(points)[:-1])


def neumann_data(pulse: aw.SourcePulse, quadrature: SurfaceQuadrature, time_grid: TimeGrid, omega: DomainSpec | None = None) -> BoundaryField:
    """f_{B,T} sampled at the quadrature nodes on the time grid, shape (steps+1, nodes)."""
    T = time_grid.T
    if omega is not None:
        check_admissible(omega, pulse, T)
    src = TimeReversedNeumann(pulse, T)
    vals = np.stack([src.flux(quadrature.nodes, quadrature.normals, t) for t in time_grid.times()])
    return BoundaryField(quadrature, vals)


# --------------------------------------------------------------------------
# Laplace transforms in time
# --------------------------------------------------------------------------

_KERNELS = {
    "v": aw.v_radial,
    "dv_dr": aw.dv_dr_radial,
    "dv_dt": aw.dv_dt_radial,
}


def _time_breaks(r: Array, T: float, eta: float) -> Array:
    """Sorted t-breakpoints (N, 6) where v(r, T - t) changes formula or kinks (s = r)."""
    s_breaks = np.stack([r - eta, eta - r, r + eta, r], axis=1)
    t_breaks = np.clip(T - s_breaks, 0.0, T)
    edges = np.concatenate([np.zeros((len(r), 1)), t_breaks, np.full((len(r), 1), T)], axis=1)
    return np.sort(edges, axis=1)


def _laplace_chunk(kind: str, r: Array, tau: float, T: float, eta: float, m: int) -> Array:
    fn = _KERNELS[kind]
    g, wg = gauss_legendre(_GL_NODES)
    edges = _time_breaks(r, T, eta)
    lo, hi = edges[:, :-1], edges[:, 1:]
    # m equal sub-pieces per piece, GL nodes on each
    frac = np.arange(m + 1) / m
    sub = lo[:, :, None] + (hi - lo)[:, :, None] * frac[None, None, :]
    a, b = sub[:, :, :-1], sub[:, :, 1:]
    half = 0.5 * (b - a)
    t = 0.5 * (a + b)[..., None] + half[..., None] * g
    w = half[..., None] * wg
    vals = fn(r[:, None, None, None], T - t, eta)
    # keep the kernel away from the exact breakpoints: GL nodes are interior
    return np.sum(w * np.exp(-tau * t) * vals, axis=(1, 2, 3))


def laplace_radial(
    kind: str,
    r: ArrayLike,
    tau: float,
    T: float,
    eta: float,
    check: bool = False,
    atol: float = 0.0,
    rtol: float = 1e-12,
) -> Array:
    """int_0^T exp(-tau t) g(r, T - t) dt for g in {v, dv_dr, dv_dt}, per radius.

    With ``check=True`` the sub-piece count is doubled until successive
    estimates agree to ``atol + rtol*|value|`` at every radius.
    """
    r = np.atleast_1d(np.asarray(r, dtype=float))
    m = max(1, int(np.ceil(tau * T / _TAU_DT_PER_PIECE)))
    out = np.empty_like(r)
    for start in range(0, len(r), _CHUNK):
        sl = slice(start, start + _CHUNK)
        val = _laplace_chunk(kind, r[sl], tau, T, eta, m)
        if check:
            mm = m
            while True:
                finer = _laplace_chunk(kind, r[sl], tau, T, eta, 2 * mm)
                if np.all(np.abs(finer - val) <= atol + rtol * np.abs(finer)) or mm > 256:
                    val = finer
                    break
                val, mm = finer, 2 * mm
        out[sl] = val
    return out


def w_star_at(pulse: aw.SourcePulse, points: ArrayLike, tau: float, T: float) -> tuple[Array, Array]:
    """w* and its gradient at arbitrary points; shapes (N,) and (N, 3)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    d = pts - np.asarray(pulse.p)
    r = np.linalg.norm(d, axis=1)
    # radial symmetry: evaluate once per distinct radius
    ur, inv = np.unique(r, return_inverse=True)
    w = pulse.amplitude * laplace_radial("v", ur, tau, T, pulse.eta)[inv]
    dr = pulse.amplitude * laplace_radial("dv_dr", ur, tau, T, pulse.eta)[inv]
    safe = np.where(r > 0, r, 1.0)
    grad = np.where(r[:, None] > 0, (dr / safe)[:, None] * d, 0.0)
    return w, grad


def w_star_boundary(
    pulse: aw.SourcePulse,
    quadrature: SurfaceQuadrature,
    tau: float,
    T: float,
    omega: DomainSpec | None = None,
) -> tuple[BoundaryField, BoundaryField]:
    if omega is not None:
        check_admissible(omega, pulse, T)
    w, grad = w_star_at(pulse, quadrature.nodes, tau, T)
    dn = np.einsum("ij,ij->i", grad, quadrature.normals)
    return BoundaryField(quadrature, w), BoundaryField(quadrature, dn)


def j_star(
    pulse: aw.SourcePulse,
    D: DomainSpec,
    tau: float,
    T: float,
    order: int = 24,
    omega: DomainSpec | None = None,
) -> float:
    """int_D |grad w*|^2 + tau^2 |w*|^2 dx by ball quadrature per obstacle component."""
    if omega is not None:
        check_containment(omega, D)
        check_admissible(omega, pulse, T)
    total = 0.0
    for ball in obstacle_balls(D):
        q = ball_volume_quadrature(ball, order)
        w, grad = w_star_at(pulse, q.nodes, tau, T)
        total += float(q.integrate(np.einsum("ij,ij->i", grad, grad) + tau**2 * w**2))
    return total


def free_time_integral(pulse: aw.SourcePulse, x: ArrayLike, T: float, n: int = 64) -> Array:
    """int_0^T v(x, s) ds by composite GL split at the region transitions (tau = 0 reference)."""
    r = np.atleast_1d(pulse.radius_of(x))
    return pulse.amplitude * _laplace_chunk("v", r, 0.0, T, pulse.eta, max(1, n // _GL_NODES))
