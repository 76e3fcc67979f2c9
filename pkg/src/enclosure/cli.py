"""Command-line entry point and experiment orchestration.

``enclosure run -c demo.toml`` executes validate -> forward solve ->
indicator -> extraction and writes, under ``output_dir``:

  trace.bin            boundary trace of the obstacle run (see write_trace)
  indicator.csv        tau, I, (1/tau) log I, sign and log of e^{tau T} I
  floor.csv            per-tau noise floor and admissibility flag
  extraction.txt       key=value extraction record (status=null if refused)
  manifest.json        config digest, timings, solver stats, file digests

Exit status: 0 success (including a recorded null extraction), 1 bad
configuration or usage, 2 admissibility failure, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import DEFAULTS, ConfigError, ExperimentConfig, build_config, load_config, resolve_threads
from .extraction import (
    InsufficientPoints,
    NegativeIndicatorThroughout,
    fit_slope,
    qualitative_criterion,
    validate_admissibility,
    write_record,
)
from .forward_solver import (
    BoundaryTrace,
    NumericalInstabilityError,
    SolverStats,
    build_grid,
    read_trace,
    solve,
    write_trace,
)
from .geometry import GeometryError, sup_radius, surface_quadrature
from .indicator import (
    IndicatorSeries,
    compute_indicator,
    noise_floor,
    read_table,
    write_floor_table,
    write_table,
)
from .oracles import LEVELS, run_oracle_suite
from .reference_field import AdmissibilityError, TimeReversedNeumann

log = logging.getLogger("enclosure")

EXIT_OK, EXIT_CONFIG, EXIT_ADMISSIBILITY, EXIT_NUMERICAL = 0, 1, 2, 3
MANIFEST_NAME = "manifest.json"
PLOT_COLUMNS = ("tau", "inv_tau_log_I")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    config_digest: str
    version: str
    started: str
    finished: str = ""
    status: str = "running"
    stages: list[str] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    admissibility: list[str] = field(default_factory=list)
    solver: dict = field(default_factory=dict)
    extraction: dict | None = None
    criterion: dict | None = None
    known_R_D: float | None = None
    files: list[dict] = field(default_factory=list)

    def add_file(self, path: Path, root: Path) -> None:
        rel = str(Path(path).resolve().relative_to(root.resolve()))
        self.files = [f for f in self.files if f["path"] != rel]
        self.files.append({"path": rel, "sha256": sha256_file(path), "bytes": Path(path).stat().st_size})

    def file(self, name: str) -> dict | None:
        return next((f for f in self.files if f["path"] == name), None)

    def write(self, out_dir: Path) -> Path:
        path = Path(out_dir) / MANIFEST_NAME
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True, default=str) + "\n")
        return path

    @classmethod
    def read(cls, path) -> RunManifest:
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        return cls(**json.loads(path.read_text()))


# --------------------------------------------------------------------------
# pipeline stages
# --------------------------------------------------------------------------


def simulate_trace(cfg: ExperimentConfig, obstacle, quadrature=None, time_grid=None) -> tuple[BoundaryTrace, SolverStats]:
    """Forward solve on Omega minus ``obstacle`` (None: no obstacle)."""
    grid = build_grid(cfg.omega, obstacle, cfg.resolution)
    q = quadrature if quadrature is not None else surface_quadrature(cfg.omega, cfg.surface_order)
    tg = time_grid if time_grid is not None else grid.time_grid(cfg.T)
    return solve(
        grid,
        TimeReversedNeumann(cfg.pulse, cfg.T),
        tg,
        q,
        trace_method=cfg.trace_method,
        eta=cfg.pulse.eta,
        p=cfg.pulse.p,
    )


def _check_trace(cfg: ExperimentConfig, trace: BoundaryTrace) -> None:
    if abs(trace.T - cfg.T) > 1e-9 * cfg.T:
        raise ConfigError(f"trace horizon {trace.T} does not match T = {cfg.T}")
    if np.isfinite(trace.eta) and abs(trace.eta - cfg.pulse.eta) > 1e-12:
        raise ConfigError(f"trace was recorded with eta = {trace.eta}, config has {cfg.pulse.eta}")


def invert(cfg: ExperimentConfig, trace: BoundaryTrace, background: BoundaryTrace | None, threads: int) -> IndicatorSeries:
    """Indicator with its noise floor attached."""
    ref = cfg.indicator_reference
    floor = None
    if background is not None:
        floor = noise_floor(background, cfg.pulse, cfg.tau, ref, trace=trace)
    return compute_indicator(trace, cfg.pulse, cfg.tau, T=cfg.T, reference=ref, background=background, floor=floor, threads=threads)


def _extract(cfg: ExperimentConfig, series: IndicatorSeries, manifest: RunManifest, out_dir: Path) -> None:
    rec_path = out_dir / "extraction.txt"
    try:
        result = fit_slope(series, cfg.pulse.eta, cfg.window, cfg.fit_model)
    except (InsufficientPoints, NegativeIndicatorThroughout) as exc:
        reason = f"{type(exc).__name__}: {exc}"
        log.warning("extraction refused: %s", reason)
        write_record(None, rec_path, reason)
        manifest.extraction = {"status": "null", "reason": reason}
    else:
        write_record(result, rec_path)
        manifest.extraction = result.as_record()
    if manifest.known_R_D is not None:
        rep = qualitative_criterion(series, cfg.T, cfg.pulse.eta, manifest.known_R_D, cfg.window, cfg.fit_model)
        manifest.criterion = {
            "trend": rep.trend.value,
            "predicted": rep.predicted.value,
            "rate": rep.rate,
            "threshold": rep.threshold,
            "consistent": rep.consistent,
        }
    manifest.add_file(rec_path, out_dir)


def run_experiment(cfg: ExperimentConfig, stages=("simulate", "invert")) -> RunManifest:
    """Execute the requested stages and write the manifest.

    ``simulate`` writes trace.bin from the obstacle run.  ``invert`` reads
    the trace (cfg.trace_file, or the one just simulated), runs the
    obstacle-free background solve and writes the indicator, floor and
    extraction outputs.
    """
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    threads = resolve_threads(cfg.threads)
    report = validate_admissibility(cfg.omega, cfg.d, cfg.pulse, cfg.T)
    manifest = RunManifest(
        config_digest=cfg.digest(),
        version=__version__,
        started=_now(),
        stages=list(stages),
        config={k: v for k, v in cfg.raw.items()},
        admissibility=report.lines(),
        known_R_D=None if cfg.d is None else sup_radius(cfg.d, cfg.pulse.p),
    )
    trace = None
    try:
        if "simulate" in stages:
            trace, stats = simulate_trace(cfg, cfg.d)
            manifest.solver["obstacle"] = stats.as_dict()
            path = out_dir / "trace.bin"
            write_trace(path, trace)
            manifest.add_file(path, out_dir)
        if "invert" in stages:
            if trace is None:
                src = cfg.trace_file or out_dir / "trace.bin"
                trace = read_trace(src)
                _check_trace(cfg, trace)
                manifest.config["trace_sha256"] = sha256_file(src)
            if cfg.d is None and "simulate" in stages:
                background = trace  # the obstacle run already is the obstacle-free run
            else:
                background, stats = simulate_trace(cfg, None, trace.quadrature, trace.time_grid)
                manifest.solver["background"] = stats.as_dict()
            series = invert(cfg, trace, background, threads)
            for name, writer in (("indicator.csv", write_table), ("floor.csv", write_floor_table)):
                writer(series, out_dir / name)
                manifest.add_file(out_dir / name, out_dir)
            _extract(cfg, series, manifest, out_dir)
        manifest.status = "ok"
    except NumericalInstabilityError:
        manifest.status = "numerical_failure"
        raise
    finally:
        manifest.finished = _now()
        manifest.write(out_dir)
    return manifest


def emit_plot_data(manifest_path, out_name: str = "plot_data.csv") -> Path:
    """(tau, (1/tau) log I) pairs, plus -2((T - eta) - R_D) when R_D is known."""
    manifest_path = Path(manifest_path)
    out_dir = manifest_path if manifest_path.is_dir() else manifest_path.parent
    manifest = RunManifest.read(manifest_path)
    if manifest.file("indicator.csv") is None:
        raise FileNotFoundError(f"{out_dir}: the manifest lists no indicator table")
    T, eta = float(manifest.config["T"]), float(manifest.config["eta"])
    series = read_table(out_dir / "indicator.csv", T)
    known = manifest.known_R_D
    header = PLOT_COLUMNS + (("reference",) if known is not None else ())
    ref = None if known is None else -2.0 * ((T - eta) - known)
    lines = [",".join(header)]
    for tau, val in zip(series.tau.values, series.log_indicator):
        row = [repr(float(tau)), "nan" if np.isnan(val) else repr(float(val))]
        if ref is not None:
            row.append(repr(ref))
        lines.append(",".join(row))
    path = out_dir / out_name
    path.write_text("\n".join(lines) + "\n")
    manifest.add_file(path, out_dir)
    manifest.write(out_dir)
    return path


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with 1 so that 2 stays reserved for admissibility."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _vector(text: str) -> list[float]:
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected x,y,z, got {text!r}")
    return parts


def _vectors(text: str) -> list[list[float]]:
    return [_vector(chunk) for chunk in text.split(";") if chunk.strip()]


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",")]


_FLAG_TYPES = {
    "omega_center": _vector,
    "omega_lo": _vector,
    "omega_hi": _vector,
    "obstacle_center": _vector,
    "p": _vector,
    "obstacle_centers": _vectors,
    "obstacle_radii": _floats,
}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("-c", "--config", type=Path, help="TOML file with the flat key set")
    grp = parser.add_argument_group("configuration overrides (one flag per key)")
    for key, default in DEFAULTS.items():
        kind = _FLAG_TYPES.get(key)
        if kind is None:
            kind = int if isinstance(default, int) else float if isinstance(default, float) else str
        if key in ("eta", "T", "obstacle_radius", "window_tau_lo", "window_tau_hi"):
            kind = float
        grp.add_argument(f"--{key.replace('_', '-')}", dest=key, type=kind, default=None, metavar=key.upper())


def _config_from_args(args) -> ExperimentConfig:
    overrides = {k: getattr(args, k) for k in DEFAULTS}
    if args.config is not None:
        return load_config(args.config, overrides)
    return build_config({k: v for k, v in overrides.items() if v is not None})


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="enclosure", description="Time-domain enclosure experiments on a 3-D cavity.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, text in (
        ("validate", "check the configuration and print the admissibility report"),
        ("simulate", "forward solve only; writes trace.bin"),
        ("invert", "trace -> indicator -> extraction"),
        ("run", "simulate then invert"),
    ):
        _add_config_flags(sub.add_parser(name, help=text))
    oracle = sub.add_parser("oracle-suite", help="closed-form vs quadrature checks")
    oracle.add_argument("--level", choices=LEVELS, default="quick")
    oracle.add_argument("--seed", type=int, default=0)
    plots = sub.add_parser("emit-plots", help="write plot_data.csv from a finished run")
    plots.add_argument("manifest", type=Path, help="manifest.json or its run directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "oracle-suite":
            report = run_oracle_suite(args.level, args.seed)
            print("\n".join(report.lines()))
            return EXIT_OK if report.ok else EXIT_NUMERICAL
        if args.command == "emit-plots":
            print(emit_plot_data(args.manifest))
            return EXIT_OK
        cfg = _config_from_args(args)
        if args.command == "validate":
            rep = validate_admissibility(cfg.omega, cfg.d, cfg.pulse, cfg.T)
            print("\n".join(rep.lines()))
            return EXIT_OK
        stages = {"simulate": ("simulate",), "invert": ("invert",), "run": ("simulate", "invert")}[args.command]
        manifest = run_experiment(cfg, stages)
        print(json.dumps({"status": manifest.status, "extraction": manifest.extraction, "output_dir": str(cfg.output_dir)}, default=str))
        return EXIT_OK
    except AdmissibilityError as exc:
        print(f"admissibility failure: {exc}", file=sys.stderr)
        return EXIT_ADMISSIBILITY
    except NumericalInstabilityError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, GeometryError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
