"""Named closed-form vs oracle comparisons, run as one suite.

Each check draws its parameters from a seeded generator and records the
worst relative discrepancy against a fixed tolerance.  ``quick`` uses fewer
draws and lower quadrature orders than ``full``; the identity checks are
pure arithmetic and run at full size at both levels.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import analytic_waves as aw
from . import closed_forms as cf

LEVELS = ("quick", "full")


@dataclass(frozen=True)
class OracleCheck:
    name: str
    worst: float
    tol: float
    samples: int
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.worst) and self.worst <= self.tol)

    def line(self) -> str:
        state = "PASS" if self.passed else "FAIL"
        return f"{self.name:<28} {state}  worst={self.worst:.3e}  tol={self.tol:.0e}  n={self.samples}  t={self.seconds:.2f}s"


@dataclass
class OracleReport:
    level: str
    seed: int
    checks: list[OracleCheck]

    @property
    def n_passed(self) -> int:
        return sum(c.passed for c in self.checks)

    @property
    def n_failed(self) -> int:
        return len(self.checks) - self.n_passed

    @property
    def ok(self) -> bool:
        return self.n_failed == 0

    def get(self, name: str) -> OracleCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def lines(self) -> list[str]:
        head = f"oracle-suite level={self.level} seed={self.seed} passed={self.n_passed} failed={self.n_failed}"
        return [head] + [c.line() for c in self.checks]


def _rel(a: float, b: float) -> float:
    return abs(a - b) / abs(b) if b != 0 else abs(a)


def _timed(name: str, tol: float, fn) -> OracleCheck:
    t0 = time.perf_counter()
    worst, n = fn()
    return OracleCheck(name, float(worst), tol, n, time.perf_counter() - t0)


def _laplace_draws(rng: np.random.Generator, n: int) -> list[cf.LaplaceParams]:
    """tau in [0.5, 50], eta in [0.1, 2], T - eta in [0.05, 3]."""
    eta = rng.uniform(0.1, 2.0, n)
    T = eta + rng.uniform(0.05, 3.0, n)
    tau = rng.uniform(0.5, 50.0, n)
    return [cf.LaplaceParams(*args) for args in zip(tau, T, eta)]


# --------------------------------------------------------------------------
# identity checks
# --------------------------------------------------------------------------


def check_recurrence(j: int, rng: np.random.Generator, n: int = 1000, tol: float = 1e-13) -> OracleCheck:
    """H_j from H_{j-1} over tau in [0.5, 50] and R1 < R2 in [0.1, 5]."""

    def run():
        worst = 0.0
        for _ in range(n):
            tau = rng.uniform(0.5, 50.0)
            R1, R2 = np.sort(rng.uniform(0.1, 5.0, 2))
            ann = cf.ShellAnnulus(R1, R2)
            worst = max(worst, _rel(cf.H_recurrence_rhs(j, tau, ann), cf.H_j(j, tau, ann)))
        return worst, n

    return _timed(f"recurrence_H{j}", tol, run)


def check_two_paths(sign: str, rng: np.random.Generator, n: int = 1000, tol: float = 1e-11) -> OracleCheck:
    kern, poly = (
        (cf.script_H_plus_kernels, cf.script_H_plus_poly)
        if sign == "plus"
        else (cf.script_H_minus_kernels, cf.script_H_minus_poly)
    )

    def run():
        draws = _laplace_draws(rng, n)
        return max(_rel(kern(P), poly(P)) for P in draws), n

    return _timed(f"two_paths_H_{sign}", tol, run)


def check_sum_formula(rng: np.random.Generator, n: int = 1000, tol: float = 1e-12) -> OracleCheck:
    """H_+ + H_- against the three-exponential closed form."""

    def run():
        draws = _laplace_draws(rng, n)
        return max(_rel(cf.script_H_plus(P) + cf.script_H_minus(P), cf.script_H_sum_exponentials(P)) for P in draws), n

    return _timed("sum_formula", tol, run)


def check_g_endpoint(rng: np.random.Generator, n: int = 1000, tol: float = 1e-13) -> OracleCheck:
    """g_tau(T - eta) = (eta - 2/tau)/tau from the polynomial evaluator."""

    def run():
        worst = 0.0
        for P in _laplace_draws(rng, n):
            tau = Fraction(P.tau)
            exact = float((Fraction(P.eta) - 2 / tau) / tau)
            worst = max(worst, _rel(float(cf.g_poly(P, P.T - P.eta)), exact))
        return worst, n

    return _timed("g_endpoint_value", tol, run)


# --------------------------------------------------------------------------
# oracle checks
# --------------------------------------------------------------------------


def _region_point(rng: np.random.Generator, region: aw.WaveRegion, eta: float) -> tuple[float, float]:
    """(r, t) strictly inside ``region`` for a pulse of radius eta."""
    while True:
        t = rng.uniform(0.05, 3.0)
        if region == aw.WaveRegion.CORE:
            if t >= eta:
                continue
            r = rng.uniform(0.0, eta - t)
        elif region == aw.WaveRegion.SHELL:
            r = rng.uniform(max(0.0, abs(t - eta)), t + eta)
        elif region == aw.WaveRegion.LACUNA:
            if t <= eta:
                continue
            r = rng.uniform(0.0, t - eta)
        else:
            r = rng.uniform(t + eta, t + eta + 2.0)
        if aw.classify_radial(r, t, eta) == region and r > 0:
            return r, t


def check_wave_region(region: aw.WaveRegion, rng: np.random.Generator, n: int = 100, tol: float = 1e-9, n_phi: int = 64) -> OracleCheck:
    """Closed-form v against the spherical-mean quadrature on random points of one region.

    The error is relative to max(|v|, eta^2 * 1e-3) so points where v is
    exactly zero do not divide by zero.
    """

    def run():
        worst = 0.0
        for _ in range(n):
            eta = rng.uniform(0.2, 1.5)
            p = rng.uniform(-1.0, 1.0, 3)
            pulse = aw.SourcePulse(tuple(p), eta)
            r, t = _region_point(rng, region, eta)
            d = rng.normal(size=3)
            x = p + r * d / np.linalg.norm(d)
            ref = aw.spherical_mean_oracle(pulse, x, t, n_phi=n_phi)
            val = float(aw.v(pulse, x, t))
            worst = max(worst, abs(val - ref) / max(abs(ref), 1e-3 * eta**2))
        return worst, n

    return _timed(f"wave_{region.name.lower()}", tol, run)


def check_shell_integral(j: int, rng: np.random.Generator, n: int, order: int, tol: float = 1e-6) -> OracleCheck:
    """Kernel-weighted shell integral of |y-p|^j against 3-D quadrature."""

    def run():
        worst = 0.0
        for _ in range(n):
            tau = rng.uniform(1.0, 20.0)
            R1 = rng.uniform(0.5, 1.5)
            R2 = R1 + rng.uniform(0.1, 1.0)
            p = rng.uniform(-0.5, 0.5, 3)
            d = rng.normal(size=3)
            x = p + rng.uniform(0.05, 0.9) * R1 * d / np.linalg.norm(d)
            ann = cf.ShellAnnulus(R1, R2)
            worst = max(worst, _rel(cf.I_j_closed(j, tau, ann, x, p), cf.I_j_oracle(j, tau, ann, x, p, order=order)))
        return worst, n

    return _timed(f"shell_integral_j{j}", tol, run)


def check_ball_potential(j: int, rng: np.random.Generator, n: int, order: int) -> tuple[OracleCheck, OracleCheck]:
    """Ball potentials v_j: vs 3-D quadrature (1e-4) and vs the K_j antiderivative (1e-12)."""
    pts = []
    for _ in range(n):
        tau = rng.uniform(1.0, 20.0)
        eta = rng.uniform(0.3, 1.5)
        d = rng.normal(size=3)
        pts.append((tau, eta, rng.uniform(0.05, 0.95) * eta * d / np.linalg.norm(d)))

    def run_quad():
        return max(_rel(float(cf.ball_potential(j, tau, eta, x)), cf.ball_potential_oracle(j, tau, eta, x, order=order)) for tau, eta, x in pts), n

    def run_anti():
        return max(_rel(float(cf.ball_potential(j, tau, eta, x)), float(cf.ball_potential_via_antiderivative(j, tau, eta, x))) for tau, eta, x in pts), n

    return _timed(f"ball_potential_j{j}_quad", 1e-4, run_quad), _timed(f"ball_potential_j{j}_antider", 1e-12, run_anti)


def check_shell_source(rng: np.random.Generator, n: int, order: int, tol: float = 1e-5) -> OracleCheck:
    """Full shell-source integral against script_H_sum times the sinh kernel."""

    def run():
        worst = 0.0
        for _ in range(n):
            eta = rng.uniform(0.2, 1.0)
            T = eta + rng.uniform(0.5, 1.5)
            tau = rng.uniform(1.0, 15.0)
            P = cf.LaplaceParams(tau, T, eta)
            d = rng.normal(size=3)
            x = rng.uniform(0.05, 0.9) * (T - eta) * d / np.linalg.norm(d)
            p = np.zeros(3)
            worst = max(worst, _rel(cf.shell_source_closed(P, x, p), cf.shell_source_oracle(P, x, p, order=order)))
        return worst, n

    return _timed("shell_source_integral", tol, run)


def run_oracle_suite(level: str = "quick", seed: int = 0) -> OracleReport:
    if level not in LEVELS:
        raise ValueError(f"level must be one of {LEVELS}, got {level!r}")
    full = level == "full"
    rng = np.random.default_rng(seed)
    checks = [check_recurrence(j, rng) for j in (0, 1, 2)]
    checks += [check_two_paths(s, rng) for s in ("plus", "minus")]
    checks += [check_sum_formula(rng), check_g_endpoint(rng)]
    n_wave = 100 if full else 25
    checks += [check_wave_region(reg, rng, n=n_wave) for reg in aw.WaveRegion]
    n_q, order = (8, 48) if full else (3, 32)
    checks += [check_shell_integral(j, rng, n_q, order) for j in (-1, 0, 1, 2)]
    for j in (-1, 0, 1, 2):
        checks += list(check_ball_potential(j, rng, n_q, 96 if full else 80))
    checks.append(check_shell_source(rng, n_q, 64 if full else 48))
    return OracleReport(level, seed, checks)
