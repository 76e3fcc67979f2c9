"""Recover R_D(p) from the decay rate of I(tau) and classify e^{tau T} I(tau).

The fitted model is log I = a + s*tau (``affine``) or
log I = a + k*log(tau) + s*tau (``power``).  In both cases the exponential
rate s gives R_D = (T - eta) + s/2.  The power model absorbs the algebraic
prefactor of I; without it the slope over a finite window is biased by
about k/tau_mid.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import analytic_waves as aw
from .geometry import DomainSpec, containment_margin, sup_radius
from .indicator import IndicatorSeries

FIT_MODELS = ("affine", "power")
HARD_CONDITIONS = ("lacuna", "containment")


class InsufficientPoints(ValueError):
    pass


class NegativeIndicatorThroughout(ValueError):
    pass


class Verdict(str, enum.Enum):
    BLOWUP = "Blowup"
    DECAY = "Decay"
    INDETERMINATE = "Indeterminate"


@dataclass(frozen=True)
class WindowPolicy:
    """How to pick the fitted tau window from the admissible points.

    ``upper``: the last ``max(min_points, ceil(fraction * n))`` points of the
    longest contiguous admissible run ending at the last admissible tau.
    ``run``: that whole run.  ``fixed``: admissible points in [tau_lo, tau_hi].
    """

    kind: str = "upper"
    min_points: int = 4
    fraction: float = 0.5
    tau_lo: float | None = None
    tau_hi: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("upper", "run", "fixed"):
            raise ValueError(f"unknown window policy {self.kind!r}")
        if self.kind == "fixed" and (self.tau_lo is None or self.tau_hi is None):
            raise ValueError("a fixed window needs tau_lo and tau_hi")
        if self.min_points < 2 or not 0 < self.fraction <= 1:
            raise ValueError("min_points >= 2 and 0 < fraction <= 1 required")


def select_window(series: IndicatorSeries, policy: WindowPolicy) -> np.ndarray:
    """Indices of the fitted points; raises when fewer than ``min_points`` qualify."""
    ok = series.admissible
    if not np.any(series.I > 0):
        raise NegativeIndicatorThroughout(
            "the indicator is never positive; the size condition eta + 2 R_D > R_Omega may fail or the signal is below the noise floor"
        )
    if not ok.any():
        raise InsufficientPoints("no tau value is above the noise floor")
    tau = series.tau.values
    if policy.kind == "fixed":
        idx = np.nonzero(ok & (tau >= policy.tau_lo) & (tau <= policy.tau_hi))[0]
    else:
        last = int(np.nonzero(ok)[0][-1])
        first = last
        while first > 0 and ok[first - 1]:
            first -= 1
        idx = np.arange(first, last + 1)
        if policy.kind == "upper":
            keep = max(policy.min_points, math.ceil(policy.fraction * idx.size))
            idx = idx[-keep:]
    if idx.size < policy.min_points:
        raise InsufficientPoints(f"{idx.size} admissible points in the window, need {policy.min_points}")
    return idx


def _design(tau: np.ndarray, model: str) -> np.ndarray:
    if model == "affine":
        return np.stack([np.ones_like(tau), tau], axis=1)
    if model == "power":
        return np.stack([np.ones_like(tau), np.log(tau), tau], axis=1)
    raise ValueError(f"fit model must be one of {FIT_MODELS}, got {model!r}")


@dataclass(frozen=True)
class LinearFit:
    coef: np.ndarray
    stderr: np.ndarray
    r_squared: float


def _ols(X: np.ndarray, y: np.ndarray) -> LinearFit:
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    ss_res = float(resid @ resid)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    dof = len(y) - X.shape[1]
    if dof > 0:
        cov = np.linalg.pinv(X.T @ X) * (ss_res / dof)
        se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    else:
        se = np.full(X.shape[1], np.nan)
    return LinearFit(coef, se, r2)


@dataclass
class ExtractionResult:
    slope: float
    R_D_estimate: float
    fit_window: tuple[float, float]
    r_squared: float
    n_points: int
    model: str
    T: float
    eta: float
    intercept: float
    prefactor_exponent: float = float("nan")
    slope_stderr: float = float("nan")
    qualitative_verdict: Verdict = Verdict.INDETERMINATE
    threshold_verdict: Verdict = Verdict.INDETERMINATE
    notes: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        lo, hi = self.fit_window
        if not lo < hi:
            raise ValueError("fit window must satisfy tau_lo < tau_hi")

    @property
    def scaled_rate(self) -> float:
        """Exponential rate of e^{tau T} I: T + slope = 2(eta + R_D) - T."""
        return self.T + self.slope

    def as_record(self) -> dict:
        d = asdict(self)
        d["qualitative_verdict"] = self.qualitative_verdict.value
        d["threshold_verdict"] = self.threshold_verdict.value
        d["tau_lo"], d["tau_hi"] = self.fit_window
        del d["fit_window"]
        d["notes"] = "; ".join(self.notes)
        d["status"] = "ok"
        return d


def fit_slope(
    series: IndicatorSeries,
    eta: float,
    policy: WindowPolicy | None = None,
    model: str = "power",
    verdict_tol: float = 0.05,
) -> ExtractionResult:
    """Least squares of log I over the selected window; R_D = (T - eta) + s/2."""
    policy = policy or WindowPolicy()
    idx = select_window(series, policy)
    tau = series.tau.values[idx]
    y = np.log(series.I[idx])
    X = _design(tau, model)
    if len(idx) < X.shape[1] + 1:
        raise InsufficientPoints(f"the {model} model needs at least {X.shape[1] + 1} points")
    fit = _ols(X, y)
    s = float(fit.coef[-1])
    res = ExtractionResult(
        slope=s,
        R_D_estimate=(series.T - eta) + 0.5 * s,
        fit_window=(float(tau[0]), float(tau[-1])),
        r_squared=fit.r_squared,
        n_points=int(idx.size),
        model=model,
        T=series.T,
        eta=float(eta),
        intercept=float(fit.coef[0]),
        prefactor_exponent=float(fit.coef[1]) if model == "power" else float("nan"),
        slope_stderr=float(fit.stderr[-1]),
    )
    res.qualitative_verdict = _trend_verdict(res.scaled_rate, res.slope_stderr, verdict_tol)
    res.threshold_verdict = threshold_verdict(series.T, eta, res.R_D_estimate, verdict_tol)
    return res


def _trend_verdict(rate: float, stderr: float, tol: float) -> Verdict:
    band = max(tol, 2.0 * stderr) if np.isfinite(stderr) else tol
    if rate > band:
        return Verdict.BLOWUP
    if rate < -band:
        return Verdict.DECAY
    return Verdict.INDETERMINATE


def threshold_verdict(T: float, eta: float, R_D: float, tol: float = 0.0) -> Verdict:
    """Blowup if T < 2(eta + R_D), Decay if T > 2(eta + R_D)."""
    gap = 2.0 * (eta + R_D) - T
    if gap > tol:
        return Verdict.BLOWUP
    if gap < -tol:
        return Verdict.DECAY
    return Verdict.INDETERMINATE


@dataclass(frozen=True)
class CriterionReport:
    trend: Verdict
    predicted: Verdict
    rate: float
    threshold: float

    @property
    def consistent(self) -> bool:
        return self.trend == self.predicted


def qualitative_criterion(
    series: IndicatorSeries,
    T: float,
    eta: float,
    R_D_candidate: float,
    policy: WindowPolicy | None = None,
    model: str = "power",
    tol: float = 0.05,
) -> CriterionReport:
    """Trend of log(e^{tau T} I) over the admissible window vs the threshold 2(eta + R_D).

    A series with no usable window is Indeterminate.
    """
    try:
        idx = select_window(series, policy or WindowPolicy())
    except (InsufficientPoints, NegativeIndicatorThroughout):
        return CriterionReport(Verdict.INDETERMINATE, threshold_verdict(T, eta, R_D_candidate), float("nan"), 2 * (eta + R_D_candidate))
    tau = series.tau.values[idx]
    y = series.scaled_log[idx]
    X = _design(tau, model)
    if len(idx) < X.shape[1] + 1:
        X = _design(tau, "affine")
    fit = _ols(X, y)
    rate = float(fit.coef[-1])
    trend = _trend_verdict(rate, float(fit.stderr[-1]), tol)
    return CriterionReport(trend, threshold_verdict(T, eta, R_D_candidate), rate, 2.0 * (eta + R_D_candidate))


# --------------------------------------------------------------------------
# Admissibility report
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ConditionCheck:
    name: str
    statement: str
    holds: bool | None
    margin: float


@dataclass
class AdmissibilityReport:
    checks: list[ConditionCheck]
    warnings: list[str]

    def get(self, name: str) -> ConditionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def ok(self) -> bool:
        """The hard conditions hold: lacuna timing and, when D is known, containment.

        ``strict``, ``size`` and ``threshold`` select which conclusion applies
        and are reported without failing the run.
        """
        return all(c.holds for c in self.checks if c.holds is not None and c.name in HARD_CONDITIONS)

    def lines(self) -> list[str]:
        out = []
        for c in self.checks:
            state = "n/a" if c.holds is None else ("pass" if c.holds else "FAIL")
            out.append(f"{c.name:<12} {state:<5} margin={c.margin:+.6g}  ({c.statement})")
        return out + [f"warning: {w}" for w in self.warnings]


def validate_admissibility(
    omega: DomainSpec,
    d: DomainSpec | None,
    pulse: aw.SourcePulse,
    T: float,
    tol: float = 1e-12,
) -> AdmissibilityReport:
    """Evaluate the timing and size conditions; report only, never raises."""
    p = pulse.p
    eta = pulse.eta
    r_omega = sup_radius(omega, p)
    m_cover = T - eta - r_omega
    checks = [
        ConditionCheck("lacuna", "T - eta >= R_Omega(p)", m_cover >= -tol, m_cover),
        ConditionCheck("strict", "T - eta > R_Omega(p)", m_cover > tol, m_cover),
    ]
    warnings = []
    if d is not None:
        r_d = sup_radius(d, p)
        m_size = eta + 2.0 * r_d - r_omega
        checks.append(ConditionCheck("size", "eta + 2 R_D(p) > R_Omega(p)", m_size > tol, m_size))
        m_in = containment_margin(omega, d)
        checks.append(ConditionCheck("containment", "closure(D) inside Omega", m_in > 0, m_in))
        gap = 2.0 * (eta + r_d) - T
        checks.append(ConditionCheck("threshold", "T < 2(eta + R_D(p)) predicts Blowup", gap > 0, gap))
    else:
        checks.append(ConditionCheck("size", "eta + 2 R_D(p) > R_Omega(p)", None, float("nan")))
        warnings.append(
            "obstacle unknown: eta + 2 R_D(p) > R_Omega(p) needs an a-priori lower bound on R_D(p); "
            f"it holds for every obstacle when eta > R_Omega(p) = {r_omega:.6g}"
        )
    return AdmissibilityReport(checks, warnings)


# --------------------------------------------------------------------------
# Record output
# --------------------------------------------------------------------------

RECORD_KEYS = (
    "status",
    "model",
    "slope",
    "slope_stderr",
    "prefactor_exponent",
    "intercept",
    "R_D_estimate",
    "tau_lo",
    "tau_hi",
    "n_points",
    "r_squared",
    "T",
    "eta",
    "qualitative_verdict",
    "threshold_verdict",
    "notes",
)


def _kv(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v).replace("\n", " ")


def write_record(result: ExtractionResult | None, path, reason: str = "") -> Path:
    """One ``key=value`` per line in RECORD_KEYS order; a null result has status=null and a reason."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if result is None:
        lines = ["status=null", f"reason={_kv(reason)}"]
    else:
        rec = result.as_record()
        lines = [f"{k}={_kv(rec[k])}" for k in RECORD_KEYS]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_record(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            k, _, v = line.partition("=")
            out[k] = v
    return out
