"""Flat TOML experiment configuration with strict key checking.

Every key is optional except where noted; unknown keys are rejected so a
typo in ``eta`` or ``T`` cannot silently fall back to a default.

=====================  ==========================================================
key                    meaning
=====================  ==========================================================
omega_shape            ``ball`` (default) or ``box``
omega_center           ball centre, default [0, 0, 0]
omega_radius           ball radius, default 1.0
omega_lo, omega_hi     box corners
obstacle_shape         ``none`` (default), ``ball`` or ``union``
obstacle_center        ball centre
obstacle_radius        ball radius
obstacle_centers       list of centres for ``union``
obstacle_radii         list of radii for ``union``
p                      source centre, default [0, 0, 0]
eta                    source radius (required)
T                      observation time (required)
tau_min, tau_max       sweep range, default 2 and 40
tau_count              number of tau values, default 16
tau_spacing            ``log`` (default) or ``linear``
resolution             cells across Omega, default 64
surface_order          surface quadrature order, default 12
seed                   seed for randomized checks, default 0
output_dir             run directory, default ``run``
indicator_reference    ``background`` (default) or ``analytic``
fit_model              ``power`` (default) or ``affine``
window                 ``upper`` (default), ``run`` or ``fixed``
window_tau_lo/hi       bounds for the fixed window
trace_file             recorded trace; when set, the obstacle run is skipped
trace_method           ``ghost`` (default) or ``normal``
threads                worker threads for the tau sweep, default 1
=====================  ==========================================================
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from .analytic_waves import SourcePulse
from .extraction import FIT_MODELS, WindowPolicy, validate_admissibility
from .geometry import BallSpec, BoxSpec, DomainSpec, GeometryError, UnionSpec
from .indicator import TauGrid
from .reference_field import AdmissibilityError

log = logging.getLogger(__name__)

THREADS_ENV = "ENCLOSURE_THREADS"

DEFAULTS: dict = {
    "omega_shape": "ball",
    "omega_center": [0.0, 0.0, 0.0],
    "omega_radius": 1.0,
    "omega_lo": None,
    "omega_hi": None,
    "obstacle_shape": "none",
    "obstacle_center": None,
    "obstacle_radius": None,
    "obstacle_centers": None,
    "obstacle_radii": None,
    "p": [0.0, 0.0, 0.0],
    "eta": None,
    "T": None,
    "tau_min": 2.0,
    "tau_max": 40.0,
    "tau_count": 16,
    "tau_spacing": "log",
    "resolution": 64,
    "surface_order": 12,
    "seed": 0,
    "output_dir": "run",
    "indicator_reference": "background",
    "fit_model": "power",
    "window": "upper",
    "window_tau_lo": None,
    "window_tau_hi": None,
    "trace_file": None,
    "trace_method": "ghost",
    "threads": 1,
}
REQUIRED = ("eta", "T")
_NOT_DIGESTED = ("output_dir", "threads")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    omega: DomainSpec
    d: DomainSpec | None
    pulse: SourcePulse
    T: float
    tau: TauGrid
    resolution: int
    surface_order: int
    seed: int
    output_dir: Path
    indicator_reference: str = "background"
    fit_model: str = "power"
    window: WindowPolicy = field(default_factory=WindowPolicy)
    trace_file: Path | None = None
    trace_method: str = "ghost"
    threads: int = 1
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def blind(self) -> bool:
        return self.trace_file is not None

    def digest(self) -> str:
        """sha256 of the canonical JSON form of the resolved keys.

        Keys that cannot change any result (where outputs go, thread count)
        are left out, so reruns elsewhere share the digest.
        """
        keep = {k: v for k, v in self.raw.items() if k not in _NOT_DIGESTED}
        blob = json.dumps(keep, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()


def _vec(key: str, value) -> tuple[float, float, float]:
    try:
        out = tuple(float(x) for x in value)
    except TypeError as exc:
        raise ConfigError(f"{key} must be a list of 3 numbers") from exc
    if len(out) != 3:
        raise ConfigError(f"{key} must have 3 components, got {len(out)}")
    return out


def _need(raw: dict, *keys: str) -> None:
    missing = [k for k in keys if raw.get(k) is None]
    if missing:
        raise ConfigError(f"missing key(s): {', '.join(missing)}")


def _omega(raw: dict) -> DomainSpec:
    shape = raw["omega_shape"]
    if shape == "ball":
        return BallSpec(_vec("omega_center", raw["omega_center"]), float(raw["omega_radius"]))
    if shape == "box":
        _need(raw, "omega_lo", "omega_hi")
        return BoxSpec(_vec("omega_lo", raw["omega_lo"]), _vec("omega_hi", raw["omega_hi"]))
    raise ConfigError(f"omega_shape must be 'ball' or 'box', got {shape!r}")


def _obstacle(raw: dict) -> DomainSpec | None:
    shape = raw["obstacle_shape"]
    if shape == "none":
        return None
    if shape == "ball":
        _need(raw, "obstacle_center", "obstacle_radius")
        return BallSpec(_vec("obstacle_center", raw["obstacle_center"]), float(raw["obstacle_radius"]))
    if shape == "union":
        _need(raw, "obstacle_centers", "obstacle_radii")
        centers, radii = raw["obstacle_centers"], raw["obstacle_radii"]
        if len(centers) != len(radii):
            raise ConfigError("obstacle_centers and obstacle_radii differ in length")
        return UnionSpec(tuple(BallSpec(_vec("obstacle_centers", c), float(r)) for c, r in zip(centers, radii)))
    raise ConfigError(f"obstacle_shape must be 'none', 'ball' or 'union', got {shape!r}")


def _choice(raw: dict, key: str, options) -> str:
    v = raw[key]
    if v not in options:
        raise ConfigError(f"{key} must be one of {tuple(options)}, got {v!r}")
    return v


def resolve_threads(configured: int) -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError as exc:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from exc
        return max(1, n)
    return max(1, int(configured))


def build_config(values: dict, base_dir: Path | None = None) -> ExperimentConfig:
    """Validate a flat key mapping and run the load-time admissibility checks.

    Raises ConfigError for malformed input and AdmissibilityError when the
    observation time does not satisfy T - eta >= R_Omega(p).
    """
    unknown = sorted(set(values) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(unknown)}")
    raw = {**DEFAULTS, **{k: v for k, v in values.items() if v is not None}}
    _need(raw, *REQUIRED)
    try:
        omega = _omega(raw)
        d = _obstacle(raw)
        pulse = SourcePulse(_vec("p", raw["p"]), float(raw["eta"]))
    except (GeometryError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    T = float(raw["T"])
    try:
        tau = TauGrid.from_range(float(raw["tau_min"]), float(raw["tau_max"]), int(raw["tau_count"]), raw["tau_spacing"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    reference = _choice(raw, "indicator_reference", ("background", "analytic"))
    model = _choice(raw, "fit_model", FIT_MODELS)
    kind = _choice(raw, "window", ("upper", "run", "fixed"))
    try:
        window = WindowPolicy(kind, tau_lo=raw["window_tau_lo"], tau_hi=raw["window_tau_hi"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    trace_method = _choice(raw, "trace_method", ("ghost", "normal"))
    base = base_dir or Path.cwd()
    out_dir = Path(raw["output_dir"])
    out_dir = (out_dir if out_dir.is_absolute() else base / out_dir).resolve()
    trace_file = raw["trace_file"]
    if trace_file is not None:
        trace_file = Path(trace_file)
        trace_file = trace_file if trace_file.is_absolute() else base / trace_file
        if d is not None:
            log.warning("trace_file is set: the obstacle keys only serve as a known reference")
    resolution, order = int(raw["resolution"]), int(raw["surface_order"])
    if resolution < 8 or order < 2:
        raise ConfigError("resolution >= 8 and surface_order >= 2 are required")

    report = validate_admissibility(omega, d, pulse, T)
    lacuna = report.get("lacuna")
    if not lacuna.holds:
        raise AdmissibilityError(f"{lacuna.statement} violated: T={T}, eta={pulse.eta}, margin={lacuna.margin:.6g}")
    if d is not None and not report.get("containment").holds:
        raise ConfigError(f"the obstacle is not inside Omega (margin {report.get('containment').margin:.6g})")
    if trace_file is not None:
        for w in report.warnings:
            log.warning(w)

    return ExperimentConfig(
        omega=omega,
        d=d,
        pulse=pulse,
        T=T,
        tau=tau,
        resolution=resolution,
        surface_order=order,
        seed=int(raw["seed"]),
        output_dir=out_dir,
        indicator_reference=reference,
        fit_model=model,
        window=window,
        trace_file=trace_file,
        trace_method=trace_method,
        threads=int(raw["threads"]),
        raw=raw,
    )


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Read a TOML file, apply ``overrides`` (None values ignored) and validate."""
    path = Path(path)
    with open(path, "rb") as fh:
        values = tomli.load(fh)
    nested = [k for k, v in values.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"the configuration is flat; tables are not allowed: {', '.join(nested)}")
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return build_config(values, base_dir=path.parent)
