"""Closed-form free-space wave launched by the cone-shaped velocity pulse.

The pulse is Psi(x) = (eta - |x - p|) on the ball |x - p| < eta and zero
elsewhere; the wave starts from zero displacement with velocity Psi.  All
field functions are radial in r = |x - p| and piecewise polynomial in t on
each of four space-time regions (see :class:`WaveRegion`).  Formulas are
valid for t > 0 only.

Every function here accepts numpy arrays and broadcasts over them.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .geometry import Array, composite_gauss_legendre


@dataclass(frozen=True)
class SourcePulse:
    p: tuple[float, float, float]
    eta: float
    amplitude: float = 1.0

    def __post_init__(self) -> None:
        p = np.asarray(self.p, dtype=float).reshape(-1)
        if p.shape != (3,):
            raise ValueError("pulse centre must be a 3-vector")
        if not self.eta > 0:
            raise ValueError(f"pulse radius eta must be positive, got {self.eta}")
        object.__setattr__(self, "p", tuple(float(c) for c in p))
        object.__setattr__(self, "eta", float(self.eta))

    def radius_of(self, x: ArrayLike) -> Array:
        d = np.asarray(x, dtype=float) - np.asarray(self.p)
        return np.sqrt(np.einsum("...i,...i->...", d, d))


class WaveRegion(enum.IntEnum):
    AHEAD_OF_FRONT = 0
    SHELL = 1
    CORE = 2
    LACUNA = 3


def classify_radial(r: ArrayLike, t: ArrayLike, eta: float) -> NDArray[np.int8]:
    """Region code per (r, t); ties go Lacuna, AheadOfFront, Core, then Shell."""
    r, t = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(t, dtype=float))
    out = np.full(r.shape, WaveRegion.SHELL, dtype=np.int8)
    core = r + t <= eta
    ahead = r - t >= eta
    lacuna = t - r >= eta
    out[core] = WaveRegion.CORE
    out[ahead] = WaveRegion.AHEAD_OF_FRONT
    out[lacuna] = WaveRegion.LACUNA
    return out


def classify(pulse: SourcePulse, r: float, t: float) -> WaveRegion:
    if r < 0 or not t > 0:
        raise ValueError("classify needs r >= 0 and t > 0")
    return WaveRegion(int(classify_radial(r, t, pulse.eta)))


def psi(pulse: SourcePulse, x: ArrayLike) -> Array:
    r = pulse.radius_of(x)
    return pulse.amplitude * np.where(r < pulse.eta, pulse.eta - r, 0.0)


# Radial kernels.  The core-region formulas are expanded so that r -> 0 needs
# no special casing: for r <= t the cubic difference divides out exactly.


def _safe_r(r: Array) -> Array:
    # below this radius the core branch is active, so the guard never changes a result
    return np.where(r > 1e-150, r, 1.0)


def v_radial(r: ArrayLike, t: ArrayLike, eta: float) -> Array:
    r, t = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(t, dtype=float))
    region = classify_radial(r, t, eta)
    rs = _safe_r(r)
    d = r - t
    ad = np.abs(d)
    shell = 0.5 * (eta**3 / 6.0 - 0.5 * eta * d**2 + ad**3 / 3.0) / rs
    core = np.where(r <= t, eta * t - t**2 - r**2 / 3.0, eta * t - r * t - t**3 / (3.0 * rs))
    out = np.where(region == WaveRegion.SHELL, shell, 0.0)
    return np.where(region == WaveRegion.CORE, core, out)


def dv_dt_radial(r: ArrayLike, t: ArrayLike, eta: float) -> Array:
    r, t = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(t, dtype=float))
    region = classify_radial(r, t, eta)
    rs = _safe_r(r)
    d = r - t
    shell = d * (eta - np.abs(d)) / (2.0 * rs)
    core = np.where(r <= t, eta - 2.0 * t, eta - r - t**2 / rs)
    out = np.where(region == WaveRegion.SHELL, shell, 0.0)
    return np.where(region == WaveRegion.CORE, core, out)


def dv_dr_radial(r: ArrayLike, t: ArrayLike, eta: float) -> Array:
    r, t = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(t, dtype=float))
    region = classify_radial(r, t, eta)
    rs = _safe_r(r)
    d = r - t
    ad = np.abs(d)
    bracket = eta**3 / 6.0 - 0.5 * eta * d**2 + ad**3 / 3.0
    shell = (-eta * d + d * ad) / (2.0 * rs) - bracket / (2.0 * rs**2)
    core = np.where(r <= t, -2.0 * r / 3.0, -t + t**3 / (3.0 * rs**2))
    out = np.where(region == WaveRegion.SHELL, shell, 0.0)
    return np.where(region == WaveRegion.CORE, core, out)


def v(pulse: SourcePulse, x: ArrayLike, t: ArrayLike) -> Array:
    return pulse.amplitude * v_radial(pulse.radius_of(x), t, pulse.eta)


def dv_dt(pulse: SourcePulse, x: ArrayLike, t: ArrayLike) -> Array:
    return pulse.amplitude * dv_dt_radial(pulse.radius_of(x), t, pulse.eta)


def grad_v(pulse: SourcePulse, x: ArrayLike, t: ArrayLike) -> Array:
    """Spatial gradient, shape (..., 3); the zero vector at x = p."""
    x = np.asarray(x, dtype=float)
    d = x - np.asarray(pulse.p)
    r = np.sqrt(np.einsum("...i,...i->...", d, d))
    dr = pulse.amplitude * dv_dr_radial(r, t, pulse.eta)
    scale = np.where(r > 0, dr / _safe_r(r), 0.0)
    return scale[..., None] * d


def normal_derivative(pulse: SourcePulse, x: ArrayLike, normals: ArrayLike, t: ArrayLike) -> Array:
    return np.einsum("...i,...i->...", grad_v(pulse, x, t), np.asarray(normals, dtype=float))


def spherical_mean_oracle(pulse: SourcePulse, x: ArrayLike, t: float, n_phi: int = 64, grading: int = 12) -> float:
    """v(x, t) by direct quadrature of the polar-angle spherical-mean integral.

    Integrates (t/2) * sin(phi) * (eta - |x + t*omega - p|) over the polar cap
    of directions that land inside the pulse ball.  The cap is split
    geometrically toward phi = 0 so the near-singular square root at |r - t|
    small is resolved.
    """
    if n_phi < 8:
        raise ValueError("n_phi must be >= 8")
    eta = pulse.eta
    r = float(pulse.radius_of(x))
    region = classify_radial(r, t, eta)
    if region in (WaveRegion.AHEAD_OF_FRONT, WaveRegion.LACUNA):
        return 0.0
    if r == 0.0:
        # every sphere point is at distance t from p
        return pulse.amplitude * t * max(eta - t, 0.0)
    if region == WaveRegion.CORE:
        phi0 = np.pi
    else:
        c = (r * r + t * t - eta * eta) / (2.0 * t * r)
        phi0 = float(np.arccos(np.clip(c, -1.0, 1.0)))
    breaks = np.concatenate([[0.0], phi0 * 0.25 ** np.arange(grading, 0, -1), [phi0]])
    phi, w = composite_gauss_legendre(breaks, n_phi)
    dist = np.sqrt(np.maximum(r * r + t * t - 2.0 * t * r * np.cos(phi), 0.0))
    integrand = np.sin(phi) * (eta - dist)
    return pulse.amplitude * 0.5 * t * float(integrand @ w)
