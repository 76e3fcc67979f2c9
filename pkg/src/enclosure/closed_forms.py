"""Laplace-domain closed forms and their quadrature oracles.

Conventions
-----------
* ``sinh_kernel(tau, x, p) = sinh(tau*|x-p|)/|x-p|`` (value ``tau`` at x = p).
  This is the tau**2-substituted form of the classical sqrt(tau) kernel, i.e.
  the radial solution of (Laplacian - tau**2) w = 0 regular at p.
* ``H_j(tau; R1, R2) = tau * int_{R1}^{R2} r**(j+1) exp(-tau*r) dr`` for
  j = -1, 0, 1, 2, written out as polynomial times exponential.
* Everything with exp(+-tau*R) factors is evaluated as ``poly * exp(-tau*c)``
  with c >= 0; the ``log_*`` companions return (log|value|, sign) for sweeps
  where the plain value would overflow or underflow.
"""

from __future__ import annotations

from dataclasses import dataclass

import math

import numpy as np
from numpy.typing import ArrayLike
from scipy.special import gammainc

from . import analytic_waves as aw
from .geometry import (
    Array,
    BallSpec,
    BoxSpec,
    DomainSpec,
    GeometryError,
    ball_quadrature_about,
    ball_volume_quadrature,
    composite_gauss_legendre,
)


@dataclass(frozen=True)
class LogValue:
    """A real number stored as sign * exp(log_abs)."""

    log_abs: float
    sign: int

    @classmethod
    def of(cls, x: float) -> LogValue:
        if x == 0:
            return cls(-np.inf, 0)
        return cls(float(np.log(abs(x))), int(np.sign(x)))

    def value(self) -> float:
        return self.sign * float(np.exp(self.log_abs)) if self.sign else 0.0


def log_sum_signed(logs: ArrayLike, signs: ArrayLike) -> LogValue:
    """log-domain evaluation of sum_k sign_k * exp(log_k)."""
    logs = np.asarray(logs, dtype=float)
    signs = np.asarray(signs, dtype=float)
    keep = signs != 0
    if not np.any(keep):
        return LogValue(-np.inf, 0)
    m = np.max(logs[keep])
    s = float(np.sum(signs[keep] * np.exp(logs[keep] - m)))
    if s == 0:
        return LogValue(-np.inf, 0)
    return LogValue(m + float(np.log(abs(s))), int(np.sign(s)))


@dataclass(frozen=True)
class LaplaceParams:
    tau: float
    T: float
    eta: float

    def __post_init__(self) -> None:
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if not self.T > self.eta:
            raise ValueError(f"need T > eta, got T={self.T}, eta={self.eta}")


@dataclass(frozen=True)
class ShellAnnulus:
    R1: float
    R2: float

    def __post_init__(self) -> None:
        if not 0 <= self.R1 <= self.R2:
            raise ValueError(f"need 0 <= R1 <= R2, got R1={self.R1}, R2={self.R2}")


# --------------------------------------------------------------------------
# sinh kernel
# --------------------------------------------------------------------------


def log_sinh(z: ArrayLike) -> Array:
    """log(sinh z) for z > 0 without overflow."""
    z = np.asarray(z, dtype=float)
    return z + np.log(-np.expm1(-2.0 * z)) - np.log(2.0)


def sinh_kernel_radial(tau: float, r: ArrayLike) -> Array:
    r = np.asarray(r, dtype=float)
    z = tau * r
    small = z < 1e-4
    rs = np.where(small, 1.0, r)
    big = np.sinh(np.minimum(z, 700.0)) / rs
    return np.where(small, tau * (1.0 + z * z / 6.0), big)


def log_sinh_kernel_radial(tau: float, r: ArrayLike) -> Array:
    r = np.asarray(r, dtype=float)
    z = tau * r
    small = z < 1e-4
    zs = np.where(small, 1.0, z)
    return np.where(small, np.log(tau) + z * z / 6.0, log_sinh(zs) - np.log(np.where(small, 1.0, r)))


def sinh_kernel(tau: float, x: ArrayLike, p: ArrayLike) -> Array:
    """sinh(tau|x-p|)/|x-p|; saturates for tau|x-p| > 700, use the log form there."""
    r = np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(p, dtype=float), axis=-1)
    return sinh_kernel_radial(tau, r)


def log_sinh_kernel(tau: float, x: ArrayLike, p: ArrayLike) -> Array:
    r = np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(p, dtype=float), axis=-1)
    return log_sinh_kernel_radial(tau, r)


def sinh_kernel_dr(tau: float, r: ArrayLike) -> Array:
    """Radial derivative of sinh(tau r)/r."""
    r = np.asarray(r, dtype=float)
    z = tau * r
    small = z < 1e-3
    rs = np.where(small, 1.0, r)
    big = (tau * np.cosh(np.minimum(z, 700.0)) * rs - np.sinh(np.minimum(z, 700.0))) / rs**2
    return np.where(small, tau**3 * r / 3.0, big)


# --------------------------------------------------------------------------
# H_j kernels
# --------------------------------------------------------------------------

_H_POLYS = {
    -1: lambda R, tau: np.ones_like(R),
    0: lambda R, tau: R + 1.0 / tau,
    1: lambda R, tau: R**2 + 2.0 * R / tau + 2.0 / tau**2,
    2: lambda R, tau: R**3 + 3.0 * R**2 / tau + 6.0 * R / tau**2 + 6.0 / tau**3,
}


def H_poly(j: int, tau: float, R: ArrayLike) -> Array:
    if j not in _H_POLYS:
        raise ValueError(f"H_j is defined for j in (-1, 0, 1, 2), got {j}")
    return _H_POLYS[j](np.asarray(R, dtype=float), tau)


def _H_j_scaled(j: int, tau: float, annulus: ShellAnnulus) -> float:
    """e^{tau R1} H_j(tau; R1, R2), a sum of positive terms.

    H_j = tau * int_{R1}^{R2} r^{j+1} e^{-tau r} dr; expanding r^{j+1} about
    R1 leaves incomplete-gamma integrals only, so thin shells and small
    tau*R lose no digits to cancellation.
    """
    if j not in _H_POLYS:
        raise ValueError(f"H_j is defined for j in (-1, 0, 1, 2), got {j}")
    R1, R2 = float(annulus.R1), float(annulus.R2)
    k = j + 1
    z = tau * (R2 - R1)
    total = 0.0
    for i in range(k + 1):
        # int_0^delta s^i e^{-tau s} ds = i! / tau^{i+1} * P(i+1, tau delta)
        total += math.comb(k, i) * R1 ** (k - i) * math.factorial(i) / tau ** (i + 1) * float(gammainc(i + 1, z))
    return tau * total


def H_j(j: int, tau: float, annulus: ShellAnnulus) -> float:
    """H_j(tau; R1, R2) = P_j(R1) e^{-tau R1} - P_j(R2) e^{-tau R2}."""
    return math.exp(-tau * annulus.R1) * _H_j_scaled(j, tau, annulus)


def log_H_j(j: int, tau: float, annulus: ShellAnnulus) -> LogValue:
    scaled = _H_j_scaled(j, tau, annulus)
    if scaled == 0:
        return LogValue(-np.inf, 0)
    return LogValue(math.log(scaled) - tau * annulus.R1, 1)


def H_recurrence_rhs(j: int, tau: float, annulus: ShellAnnulus) -> float:
    """R1^k e^{-tau R1} - R2^k e^{-tau R2} + (k/tau) H_{j-1}, k = j + 1.

    The boundary difference is factored as
    e^{-tau R1} (R1^k - R2^k - R2^k expm1(-tau (R2 - R1))) in long double.
    """
    if j not in (0, 1, 2):
        raise ValueError("the recurrence produces H_0, H_1, H_2")
    ld = np.longdouble
    tau_, R1, R2 = ld(tau), ld(annulus.R1), ld(annulus.R2)
    k = j + 1
    # R1^k - R2^k = -(R2 - R1) * sum_i R1^i R2^(k-1-i)
    power_gap = -(R2 - R1) * sum(R1**i * R2 ** (k - 1 - i) for i in range(k))
    boundary = np.exp(-tau_ * R1) * (power_gap - R2**k * np.expm1(-tau_ * (R2 - R1)))
    return float(boundary + ld(k) / tau_ * ld(H_j(j - 1, tau, annulus)))


def I_j_closed(j: int, tau: float, annulus: ShellAnnulus, x: ArrayLike, p: ArrayLike) -> float:
    return H_j(j, tau, annulus) / tau**2 * float(sinh_kernel(tau, x, p))


def _radial_shell_integral(tau: float, xi: float, R1: float, R2: float, weight_fn, order: int) -> float:
    """(1/4pi) int_{R1<|y-p|<R2} e^{-tau|x-y|}/|x-y| * weight(|y-p|) dy with |x-p| = xi < R1.

    Spherical coordinates about p with the polar axis through x; the
    azimuth integral is exact, the (r, mu) integral is tensor Gauss-Legendre.
    """
    r, wr = composite_gauss_legendre(np.linspace(R1, R2, 5), order)
    # e^{-tau s}/s peaks toward mu = 1; grade the mu-interval there
    mb = np.concatenate([[-1.0], 1.0 - 2.0 * 0.5 ** np.arange(1, 8), [1.0]])
    mu, wmu = composite_gauss_legendre(mb, order)
    s = np.sqrt(xi**2 + r[:, None] ** 2 - 2.0 * xi * r[:, None] * mu[None, :])
    kern = np.exp(-tau * s) / s
    inner = kern @ wmu
    return float(0.5 * np.sum(wr * r**2 * weight_fn(r) * inner))


def I_j_oracle(j: int, tau: float, annulus: ShellAnnulus, x: ArrayLike, p: ArrayLike, order: int = 48) -> float:
    xi = float(np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(p, dtype=float)))
    if not 0 < xi < annulus.R1:
        raise GeometryError("I_j oracle needs x inside B_R1(p) and x != p")
    return _radial_shell_integral(tau, xi, annulus.R1, annulus.R2, lambda r: r**j, order)


# --------------------------------------------------------------------------
# script-H functions
# --------------------------------------------------------------------------


def _coeffs_plus(tau: float, T: float, eta: float) -> tuple[float, float, float, float]:
    return (
        tau * (eta - 2 * T) * (eta + T) ** 2 / 12.0 + 0.5 * T * (eta + T),
        0.5 * tau * T * (eta + T) - 0.5 * (eta + 2 * T),
        -0.25 * tau * (eta + 2 * T) + 0.5,
        tau / 6.0,
    )


def _coeffs_minus(tau: float, T: float, eta: float) -> tuple[float, float, float, float]:
    return (
        tau * (eta + 2 * T) * (eta - T) ** 2 / 12.0 + 0.5 * T * (eta - T),
        0.5 * tau * T * (eta - T) - 0.5 * (eta - 2 * T),
        -0.25 * tau * (eta - 2 * T) - 0.5,
        -tau / 6.0,
    )


def _kernel_combination(coeffs, tau: float, R1: float, R2: float) -> float:
    """sum_k c_k H_{k-2}(tau; R1, R2), accumulated in extended precision.

    The c_k grow like tau*T^3 while the result is O(eta^4), so the terms
    cancel heavily; long double buys about three extra digits where the
    platform provides it.
    """
    ld = np.longdouble
    tau_, r1, r2 = ld(tau), ld(R1), ld(R2)
    e1, e2 = np.exp(-tau_ * r1), np.exp(-tau_ * r2)
    total = ld(0)
    for ck, j in zip(coeffs, (-1, 0, 1, 2)):
        poly = _H_POLYS[j]
        total += ld(ck) * (poly(r1, tau_) * e1 - poly(r2, tau_) * e2)
    return float(total)


def _coeffs_ld(fn, tau: float, T: float, eta: float):
    ld = np.longdouble
    return fn(ld(tau), ld(T), ld(eta))


def script_H_plus_kernels(params: LaplaceParams) -> float:
    """Outer half-shell T < |y-p| < T+eta assembled from H_{-1..2}."""
    tau, T, eta = params.tau, params.T, params.eta
    return _kernel_combination(_coeffs_ld(_coeffs_plus, tau, T, eta), tau, T, T + eta)


def script_H_minus_kernels(params: LaplaceParams) -> float:
    """Inner half-shell T-eta < |y-p| < T assembled from H_{-1..2}."""
    tau, T, eta = params.tau, params.T, params.eta
    return _kernel_combination(_coeffs_ld(_coeffs_minus, tau, T, eta), tau, T - eta, T)


def f_poly(params: LaplaceParams, xi: ArrayLike) -> Array:
    """f_tau as a cubic in u = xi - (T + eta).

    In this basis the coefficients are (eta tau + 2)/tau^2, (eta tau + 2)/tau,
    (eta tau + 4)/4 and tau/6: T enters only through the shift, which avoids
    the cancellation of the monomial form at large tau*T.
    """
    tau, eta = params.tau, params.eta
    u = np.asarray(xi, dtype=float) - (params.T + eta)
    a = eta * tau
    return (a + 2.0) / tau**2 + u * ((a + 2.0) / tau + u * ((a + 4.0) / 4.0 + u * (tau / 6.0)))


def g_poly(params: LaplaceParams, xi: ArrayLike) -> Array:
    """g_tau as a cubic in u = xi - (T - eta); mirror image of :func:`f_poly`."""
    tau, eta = params.tau, params.eta
    u = np.asarray(xi, dtype=float) - (params.T - eta)
    a = eta * tau
    # eta*tau - 2 cancels near eta*tau = 2; form it from the exact long-double product
    am2 = float(np.longdouble(eta) * np.longdouble(tau) - 2)
    return am2 / tau**2 + u * (am2 / tau + u * ((a - 4.0) / 4.0 - u * (tau / 6.0)))


def f_poly_monomial(params: LaplaceParams, xi: ArrayLike) -> Array:
    """f_tau in the monomial basis of xi (reference form for identity tests)."""
    tau, T, eta = params.tau, params.T, params.eta
    xi = np.asarray(xi, dtype=float)
    return (
        tau / 6.0 * xi**3
        + (1.0 - 0.25 * tau * (eta + 2 * T)) * xi**2
        + (0.5 * tau * T * (eta + T) - (eta + 2 * T) + 2.0 / tau) * xi
        + (tau * (eta - 2 * T) * (eta + T) ** 2 / 12.0 + T * (eta + T) - (eta + 2 * T) / tau + 2.0 / tau**2)
    )


def g_poly_monomial(params: LaplaceParams, xi: ArrayLike) -> Array:
    tau, T, eta = params.tau, params.T, params.eta
    xi = np.asarray(xi, dtype=float)
    return (
        -tau / 6.0 * xi**3
        - (1.0 + 0.25 * tau * (eta - 2 * T)) * xi**2
        + (0.5 * tau * T * (eta - T) - (eta - 2 * T) - 2.0 / tau) * xi
        + (tau * (eta + 2 * T) * (eta - T) ** 2 / 12.0 + T * (eta - T) - (eta - 2 * T) / tau - 2.0 / tau**2)
    )


def _shifted_cubic(tau, eta, u, sign):
    """f_tau (sign=+1, u about T+eta) or g_tau (sign=-1, u about T-eta)."""
    a = eta * tau
    c0 = (a + 2.0 * sign) / tau**2
    return c0 + u * (c0 * tau + u * ((a + 4.0 * sign) / 4.0 + u * (sign * tau / 6.0)))


def script_H_plus_poly(params: LaplaceParams) -> float:
    """f(T) e^{-tau T} - f(T+eta) e^{-tau(T+eta)}, in extended precision."""
    ld = np.longdouble
    tau, T, eta = ld(params.tau), ld(params.T), ld(params.eta)
    lo = _shifted_cubic(tau, eta, -eta, 1.0) * np.exp(-tau * T)
    hi = _shifted_cubic(tau, eta, ld(0), 1.0) * np.exp(-tau * (T + eta))
    return float(lo - hi)


def script_H_minus_poly(params: LaplaceParams) -> float:
    """g(T-eta) e^{-tau(T-eta)} - g(T) e^{-tau T}, in extended precision."""
    ld = np.longdouble
    tau, T, eta = ld(params.tau), ld(params.T), ld(params.eta)
    lo = _shifted_cubic(tau, eta, ld(0), -1.0) * np.exp(-tau * (T - eta))
    hi = _shifted_cubic(tau, eta, eta, -1.0) * np.exp(-tau * T)
    return float(lo - hi)


def script_H_plus(params: LaplaceParams, path: str = "poly") -> float:
    return script_H_plus_poly(params) if path == "poly" else script_H_plus_kernels(params)


def script_H_minus(params: LaplaceParams, path: str = "poly") -> float:
    return script_H_minus_poly(params) if path == "poly" else script_H_minus_kernels(params)


def _q_series(w: float) -> float:
    """w cosh w - sinh w = sum_{n>=1} 2n w^{2n+1} / (2n+1)!  (small w)."""
    total, term, w2 = 0.0, w, w * w
    for n in range(1, 16):
        term *= w2 / ((2 * n) * (2 * n + 1))
        total += 2 * n * term
    return total


def _sum_factors(params: LaplaceParams) -> tuple[float, float]:
    """(e^{-w} sinh w, e^{-w} (w cosh w - sinh w)) with w = tau*eta/2."""
    w = 0.5 * params.tau * params.eta
    e2 = np.exp(-2.0 * w)
    s = -0.5 * np.expm1(-2.0 * w)
    q = _q_series(w) * np.exp(-w) if w < 1.0 else 0.5 * (w * (1.0 + e2) + np.expm1(-2.0 * w))
    return float(s), float(q)


def script_H_sum(params: LaplaceParams) -> float:
    """H_+ + H_- in the cancellation-free form 8 e^{-tau T} sinh(w) (w cosh w - sinh w) / tau^2.

    Expanding gives the three-exponential form
    4/tau^2 e^{-tau T} - (eta + 2/tau)/tau e^{-tau(T+eta)} + (eta - 2/tau)/tau e^{-tau(T-eta)};
    see :func:`script_H_sum_exponentials`.
    """
    return script_H_sum_scaled(params) * float(np.exp(-params.tau * (params.T - params.eta)))


def script_H_sum_exponentials(params: LaplaceParams) -> float:
    """Three-exponential form of H_+ + H_-, accumulated in long double.

    The terms cancel to O((tau eta)^4) for small tau*eta; binary64 loses
    about three digits there, extended precision recovers them.
    """
    ld = np.longdouble
    tau, T, eta = ld(params.tau), ld(params.T), ld(params.eta)
    coeffs = (4 / tau**2, -(eta + 2 / tau) / tau, (eta - 2 / tau) / tau)
    expos = (T, T + eta, T - eta)
    return float(sum(ck * np.exp(-tau * ek) for ck, ek in zip(coeffs, expos)))


def script_H_sum_scaled(params: LaplaceParams) -> float:
    """e^{tau (T - eta)} * (H_+ + H_-), finite for any tau."""
    s, q = _sum_factors(params)
    return 8.0 * s * q / params.tau**2


def log_script_H_sum(params: LaplaceParams) -> LogValue:
    s, q = _sum_factors(params)
    log = np.log(8.0 * s * q / params.tau**2) - params.tau * (params.T - params.eta)
    return LogValue(float(log), 1)


def shell_source_closed(params: LaplaceParams, x: ArrayLike, p: ArrayLike) -> float:
    """tau**2/(4pi) int_shell kernel * (tau v - v_t)(y, T) dy for x in B_{T-eta}(p)."""
    return script_H_sum(params) * float(sinh_kernel(params.tau, x, p))


def _source_density(params: LaplaceParams):
    pulse = aw.SourcePulse((0.0, 0.0, 0.0), params.eta)

    def density(r: Array) -> Array:
        return params.tau * aw.v_radial(r, params.T, pulse.eta) - aw.dv_dt_radial(r, params.T, pulse.eta)

    return density


def shell_source_oracle(
    params: LaplaceParams,
    x: ArrayLike,
    p: ArrayLike,
    order: int = 64,
    part: str = "both",
) -> float:
    """Direct quadrature of the shell source integral, split at |y-p| = T.

    ``part`` selects the outer half ``"plus"`` (T < |y-p| < T+eta), the inner
    half ``"minus"``, or ``"both"``.
    """
    tau, T, eta = params.tau, params.T, params.eta
    xi = float(np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(p, dtype=float)))
    if not 0 < xi < T - eta:
        raise GeometryError("the shell-source oracle needs x inside B_{T-eta}(p) and x != p")
    dens = _source_density(params)
    total = 0.0
    if part in ("both", "minus"):
        total += _radial_shell_integral(tau, xi, T - eta, T, dens, order)
    if part in ("both", "plus"):
        total += _radial_shell_integral(tau, xi, T, T + eta, dens, order)
    return tau**2 * total


# --------------------------------------------------------------------------
# Ball potentials (origin-centred ball of radius eta)
# --------------------------------------------------------------------------


def _one_minus_exp_over(tau: float, xi: Array) -> Array:
    """(1 - e^{-tau xi}) / xi with the xi -> 0 limit tau."""
    safe = np.where(xi > 0, xi, 1.0)
    return np.where(xi > 0, -np.expm1(-tau * safe) / safe, tau)


def ball_potential(j: int, tau: float, eta: float, x: ArrayLike) -> Array:
    """v_j(x) = int_{|y|<eta} e^{-tau|x-y|}/|x-y| |y|^j dy for |x| < eta.

    The terms cancel like (tau*eta)^2 for a small ball, so the sum is formed
    in long double.
    """
    xi = np.linalg.norm(np.asarray(x, dtype=float), axis=-1)
    if np.any(xi >= eta):
        raise GeometryError("ball potentials are defined for |x| < eta")
    if j not in _H_POLYS:
        raise ValueError(f"v_j is defined for j in (-1, 0, 1, 2), got {j}")
    ld = np.longdouble
    tau, eta, xi = ld(tau), ld(eta), xi.astype(ld)
    S = sinh_kernel_radial(tau, xi)
    E = np.exp(-tau * eta)
    pre = 4 * ld(np.pi) / tau**2
    if j == -1:
        out = pre * (_one_minus_exp_over(tau, xi) - E * S)
    elif j == 0:
        out = pre * (1 - (eta + 1 / tau) * E * S)
    elif j == 1:
        out = pre * (xi + 2 / tau**2 * _one_minus_exp_over(tau, xi) - E * _H_POLYS[1](eta, tau) * S)
    else:
        out = pre * (xi**2 + 6 / tau**2 - E * _H_POLYS[2](eta, tau) * S)
    return np.asarray(out, dtype=float)


def _ball_antiderivative_ld(j: int, tau, eta, xi):
    E = np.exp(-tau * eta)
    sh = np.sinh(tau * xi)
    if j == -1:
        return 2 / tau * (-np.expm1(-tau * xi) - E * sh)
    if j == 0:
        return 2 / tau * (xi - (eta + 1 / tau) * E * sh)
    if j == 1:
        return 2 / tau**3 * ((tau**2 * xi**2 + 2) - 2 * np.exp(-tau * xi) - (tau**2 * eta**2 + 2 * tau * eta + 2) * E * sh)
    if j == 2:
        return 2 * xi**3 / tau + 12 / tau**3 * xi - 2 / tau * _H_POLYS[2](eta, tau) * E * sh
    raise ValueError(f"K_j is defined for j in (-1, 0, 1, 2), got {j}")


def ball_antiderivative(j: int, tau: float, eta: float, xi: ArrayLike) -> Array:
    """K_j = int_0^eta (e^{-tau|xi-r|} - e^{-tau(xi+r)}) r^{1+j} dr, closed form in long double."""
    ld = np.longdouble
    xi = np.asarray(xi, dtype=float).astype(ld)
    return np.asarray(_ball_antiderivative_ld(j, ld(tau), ld(eta), xi), dtype=float)


def ball_potential_via_antiderivative(j: int, tau: float, eta: float, x: ArrayLike) -> Array:
    xi = np.linalg.norm(np.asarray(x, dtype=float), axis=-1)
    ld = np.longdouble
    # the antiderivative itself is O(xi); recompute it in long double before dividing
    K = _ball_antiderivative_ld(j, ld(tau), ld(eta), xi.astype(ld))
    return np.asarray(2 * ld(np.pi) / (xi.astype(ld) * ld(tau)) * K, dtype=float)


def ball_antiderivative_quadrature(j: int, tau: float, eta: float, xi: float, order: int = 32) -> float:
    """K_j by Gauss-Legendre with a split at the kink r = xi."""
    r, w = composite_gauss_legendre([0.0, xi, eta], order)
    f = (np.exp(-tau * np.abs(xi - r)) - np.exp(-tau * (xi + r))) * r ** (1 + j)
    return float(f @ w)


def _smooth_step(s: Array) -> Array:
    """C-infinity step: 0 for s <= 0, 1 for s >= 1."""
    s = np.clip(s, 0.0, 1.0)

    def f(z):
        out = np.zeros_like(z)
        pos = z > 0
        out[pos] = np.exp(-1.0 / z[pos])
        return out

    return f(s) / (f(s) + f(1.0 - s))


def ball_potential_oracle(j: int, tau: float, eta: float, x: ArrayLike, order: int = 96) -> float:
    """3-D ball quadrature in polar coordinates about x (removes the 1/|x-y| singularity).

    For j < 0 the factor |y|^j is singular at the origin as well.  A smooth
    cutoff chi(|y|), 1 near 0 and 0 beyond |x|/2, splits the integrand: the
    chi part is integrated in polar coordinates about the origin, the rest
    about x, so each rule sees only one singular point.
    """
    x = np.asarray(x, dtype=float)
    xi = float(np.linalg.norm(x))
    ball = BallSpec((0.0, 0.0, 0.0), eta)

    def kernel(nodes):
        rho = np.linalg.norm(nodes - x, axis=1)
        r = np.linalg.norm(nodes, axis=1)
        return np.exp(-tau * rho) / rho * r**j, r

    if j >= 0 or xi == 0.0:
        q = ball_quadrature_about(ball, x, order, radial_breaks=[xi] if xi > 0 else [])
        return float(q.integrate(kernel(q.nodes)[0]))
    a = 0.5 * xi
    chi = lambda r: 1.0 - _smooth_step((r - 0.5 * a) / (0.5 * a))  # noqa: E731
    qa = ball_volume_quadrature(BallSpec((0.0, 0.0, 0.0), a), order, radial_breaks=[0.5 * a])
    fa, ra = kernel(qa.nodes)
    breaks = [xi - a, xi - 0.5 * a, xi, xi + 0.5 * a, xi + a]
    qb = ball_quadrature_about(ball, x, order, radial_breaks=breaks)
    fb, rb = kernel(qb.nodes)
    return float(qa.integrate(fa * chi(ra)) + qb.integrate(fb * (1.0 - chi(rb))))


# --------------------------------------------------------------------------
# Energy of the sinh kernel over a bounded set
# --------------------------------------------------------------------------


def _log_integrate(log_f: Array, weights: Array) -> float:
    m = np.max(log_f)
    return float(m + np.log(np.sum(weights * np.exp(log_f - m))))


def _graded_axis_rule(lo: float, hi: float, tau: float, order: int) -> tuple[Array, Array]:
    """Composite GL on [lo, hi] graded geometrically toward both ends."""
    L = hi - lo
    levels = max(1, int(np.ceil(np.log2(max(tau * L, 2.0)))))
    frac = 0.5 ** np.arange(1, levels + 1)
    inner = np.concatenate([frac[::-1], 1.0 - frac])
    breaks = np.unique(np.concatenate([[0.0], inner, [1.0]]))
    x, w = composite_gauss_legendre(lo + L * breaks, order)
    return x, w


def ball_energy(tau: float, U: DomainSpec, p: ArrayLike, order: int = 24, log: bool = False):
    """(int_U k^2, int_U |grad k|^2) for k = sinh(tau|x-p|)/|x-p|.

    Accumulated in the log domain; with ``log=True`` the logarithms are
    returned instead of the values.
    """
    p = np.asarray(p, dtype=float)
    if isinstance(U, BallSpec):
        # grade radially toward the outer sphere where e^{2 tau r} peaks
        q = ball_volume_quadrature(U, order, radial_breaks=U.radius * (1.0 - 2.0 ** -np.arange(1, 9)))
        slabs = [(q.nodes, q.weights)]
    elif isinstance(U, BoxSpec):
        axes = [_graded_axis_rule(U.lo[k], U.hi[k], tau, order) for k in range(3)]
        gy, gz = np.meshgrid(axes[1][0], axes[2][0], indexing="ij")
        wyz = np.outer(axes[1][1], axes[2][1]).ravel()
        yz = np.stack([gy.ravel(), gz.ravel()], axis=1)
        slabs = [
            (np.column_stack([np.full(len(yz), xv), yz]), wx * wyz)
            for xv, wx in zip(*axes[0])
        ]
    else:
        raise GeometryError("ball_energy supports ball and box sets")

    logs_a, logs_b = [], []
    for nodes, weights in slabs:
        r = np.linalg.norm(nodes - p, axis=1)
        log_k = log_sinh_kernel_radial(tau, r)
        z = tau * r
        big = z > 1e-3
        zs = np.where(big, z, 1.0)
        rs = np.where(r > 0, r, 1.0)
        # |d/dr (sinh(tau r)/r)| = sinh(tau r)/r * (z coth z - 1)/r
        log_dk = np.where(
            big,
            log_k + np.log(np.abs(zs / np.tanh(zs) - 1.0)) - np.log(rs),
            np.log(tau**3 * np.maximum(r, 1e-300) / 3.0),
        )
        logs_a.append(_log_integrate(2.0 * log_k, weights))
        logs_b.append(_log_integrate(2.0 * log_dk, weights))
    a = _log_integrate(np.asarray(logs_a), np.ones(len(logs_a)))
    b = _log_integrate(np.asarray(logs_b), np.ones(len(logs_b)))
    if log:
        return a, b
    return float(np.exp(a)), float(np.exp(b))
