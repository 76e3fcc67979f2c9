import json
import subprocess
import sys
from pathlib import Path

import pytest

from enclosure import cli
from enclosure.cli import RunManifest, emit_plot_data, main, run_experiment, sha256_file
from enclosure.config import build_config
from enclosure.forward_solver import NumericalInstabilityError

DEMO = {
    "eta": 0.9,
    "T": 1.9,
    "obstacle_shape": "ball",
    "obstacle_center": [0.0, 0.0, 0.0],
    "obstacle_radius": 0.3,
    "resolution": 16,
    "tau_count": 8,
}


def _cfg(tmp_path, name="run", **extra):
    return build_config({**DEMO, "output_dir": str(tmp_path / name), **extra})


def _flags(tmp_path, name="run"):
    return [
        "--eta", "0.9", "--T", "1.9", "--obstacle-shape", "ball", "--obstacle-center", "0,0,0",
        "--obstacle-radius", "0.3", "--resolution", "16", "--tau-count", "8", "--output-dir", str(tmp_path / name),
    ]  # fmt: skip


# -- exit codes ------------------------------------------------------------


def test_exit_ok_and_manifest(tmp_path, capsys):
    assert main(["run", *_flags(tmp_path)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["status"] == "ok"
    m = RunManifest.read(tmp_path / "run")
    assert m.status == "ok" and m.stages == ["simulate", "invert"]
    assert m.config_digest == _cfg(tmp_path).digest()
    assert m.known_R_D == pytest.approx(0.3)
    assert set(m.solver) == {"obstacle", "background"}
    names = {f["path"] for f in m.files}
    assert names == {"trace.bin", "indicator.csv", "floor.csv", "extraction.txt"}
    for f in m.files:
        assert f["sha256"] == sha256_file(tmp_path / "run" / f["path"])
    assert m.admissibility and m.started <= m.finished


def test_exit_config_errors(tmp_path, capsys):
    assert main(["run", "--eta", "0.9"]) == 1
    assert "missing" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["run", "--resolution", "many"])
    assert exc.value.code == 1
    bad = tmp_path / "bad.toml"
    bad.write_text("eta = 0.9\nT = 1.9\nspeed = 2\n")
    assert main(["validate", "-c", str(bad)]) == 1
    assert main(["emit-plots", str(tmp_path / "nowhere")]) == 1


def test_exit_admissibility(tmp_path, capsys):
    assert main(["run", "--eta", "0.9", "--T", "1.5", "--output-dir", str(tmp_path / "x")]) == 2
    assert "admissibility" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()


def test_exit_numerical(tmp_path, monkeypatch, capsys):
    def boom(*a, **k):
        raise NumericalInstabilityError("field grew")

    monkeypatch.setattr(cli, "solve", boom)
    assert main(["run", *_flags(tmp_path)]) == 3
    assert "numerical failure" in capsys.readouterr().err
    assert RunManifest.read(tmp_path / "run").status == "numerical_failure"


def test_validate_prints_report(capsys):
    assert main(["validate", "--eta", "0.9", "--T", "1.9"]) == 0
    out = capsys.readouterr().out
    assert "lacuna" in out and "warning" in out


def test_oracle_suite_command(capsys):
    assert main(["oracle-suite", "--level", "quick", "--seed", "3"]) == 0
    head, *lines = capsys.readouterr().out.strip().splitlines()
    assert head.endswith("failed=0")
    assert lines and all("PASS" in line for line in lines)


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "enclosure.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "oracle-suite" in proc.stdout


# -- reproducibility and stages -------------------------------------------


def test_byte_identical_reruns(tmp_path):
    a = run_experiment(_cfg(tmp_path, "a"))
    b = run_experiment(_cfg(tmp_path, "b"))
    assert {f["path"]: f["sha256"] for f in a.files} == {f["path"]: f["sha256"] for f in b.files}
    assert a.config_digest == b.config_digest


def test_split_stages_match_full_run(tmp_path):
    full = run_experiment(_cfg(tmp_path, "full"))
    cfg = _cfg(tmp_path, "split")
    run_experiment(cfg, ("simulate",))
    split = run_experiment(cfg, ("invert",))
    assert split.file("indicator.csv")["sha256"] == full.file("indicator.csv")["sha256"]
    assert split.config["trace_sha256"] == full.file("trace.bin")["sha256"]


def test_blind_inversion_and_plots(tmp_path):
    known = run_experiment(_cfg(tmp_path, "known"))
    blind = run_experiment(
        build_config({"eta": 0.9, "T": 1.9, "resolution": 16, "tau_count": 8, "output_dir": str(tmp_path / "blind"), "trace_file": str(tmp_path / "known" / "trace.bin")}),
        ("invert",),
    )
    assert blind.known_R_D is None and blind.criterion is None
    assert blind.file("indicator.csv")["sha256"] == known.file("indicator.csv")["sha256"]

    lines = emit_plot_data(tmp_path / "known").read_text().splitlines()
    assert lines[0] == "tau,inv_tau_log_I,reference"
    assert sum(line.startswith("tau") for line in lines) == 1
    assert all(line.endswith(",-1.4000000000000001") or line.endswith(",-1.4") for line in lines[1:])
    blind_lines = emit_plot_data(tmp_path / "blind" / "manifest.json").read_text().splitlines()
    assert blind_lines[0] == "tau,inv_tau_log_I"
    assert all(line.count(",") == 1 for line in blind_lines)
    assert RunManifest.read(tmp_path / "blind").file("plot_data.csv") is not None


def test_blind_trace_mismatch(tmp_path):
    run_experiment(_cfg(tmp_path, "known"), ("simulate",))
    cfg = build_config({"eta": 0.9, "T": 2.0, "resolution": 16, "output_dir": str(tmp_path / "b"), "trace_file": str(tmp_path / "known" / "trace.bin")})
    assert main(["invert", "--eta", "0.9", "--T", "2.0", "--trace-file", str(cfg.trace_file), "--output-dir", str(tmp_path / "b")]) == 1


def test_null_obstacle_run_records_null(tmp_path):
    m = run_experiment(build_config({"eta": 0.9, "T": 1.9, "resolution": 16, "tau_count": 8, "output_dir": str(tmp_path / "n")}))
    assert m.extraction["status"] == "null"
    assert "background" not in m.solver
    assert (tmp_path / "n" / "extraction.txt").read_text().startswith("status=null\n")
