from pathlib import Path

import pytest

from enclosure.config import THREADS_ENV, ConfigError, build_config, load_config, resolve_threads
from enclosure.geometry import BallSpec, BoxSpec, UnionSpec
from enclosure.reference_field import AdmissibilityError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
BASE = {"eta": 0.9, "T": 1.9}


def test_demo_config_loads():
    cfg = load_config(CONFIGS / "demo.toml")
    assert cfg.d == BallSpec((0, 0, 0), 0.3)
    assert cfg.omega == BallSpec((0, 0, 0), 1.0)
    assert cfg.T == 1.9 and cfg.pulse.eta == 0.9
    assert len(cfg.tau) == 16 and cfg.resolution == 64
    assert cfg.output_dir == (CONFIGS / "../runs/demo").resolve()
    assert not cfg.blind


@pytest.mark.parametrize("name", ["demo_decay.toml", "null.toml"])
def test_shipped_configs_load(name):
    load_config(CONFIGS / name)


def test_defaults_and_required():
    cfg = build_config(BASE)
    assert cfg.d is None and cfg.fit_model == "power" and cfg.indicator_reference == "background"
    for missing in ("eta", "T"):
        with pytest.raises(ConfigError, match=missing):
            build_config({k: v for k, v in BASE.items() if k != missing})


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="unknown key.*etaa"):
        build_config({**BASE, "etaa": 0.9})


def test_tables_rejected(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("eta = 0.9\nT = 1.9\n[solver]\nresolution = 32\n")
    with pytest.raises(ConfigError, match="tables"):
        load_config(p)


def test_lacuna_violation_raises_admissibility():
    with pytest.raises(AdmissibilityError):
        build_config({"eta": 0.9, "T": 1.5})


def test_obstacle_outside_rejected():
    with pytest.raises(ConfigError, match="inside Omega"):
        build_config({**BASE, "obstacle_shape": "ball", "obstacle_center": [0.9, 0, 0], "obstacle_radius": 0.3})


@pytest.mark.parametrize(
    "extra, match",
    [
        ({"omega_shape": "torus"}, "omega_shape"),
        ({"omega_shape": "box"}, "omega_lo"),
        ({"obstacle_shape": "ball"}, "obstacle_center"),
        ({"fit_model": "cubic"}, "fit_model"),
        ({"window": "fixed"}, "tau_lo"),
        ({"tau_min": 50.0}, "tau"),
        ({"p": [0, 0]}, "3 components"),
        ({"resolution": 4}, "resolution"),
        ({"obstacle_shape": "union", "obstacle_centers": [[0, 0, 0]], "obstacle_radii": [0.1, 0.2]}, "length"),
        ({"eta": -1.0}, "eta"),
    ],
)
def test_malformed_values(extra, match):
    with pytest.raises(ConfigError, match=match):
        build_config({**BASE, **extra})


def test_box_and_union():
    cfg = build_config(
        {
            "eta": 0.9,
            "T": 0.9 + 3**0.5,
            "omega_shape": "box",
            "omega_lo": [-1, -1, -1],
            "omega_hi": [1, 1, 1],
            "obstacle_shape": "union",
            "obstacle_centers": [[0.3, 0, 0], [-0.3, 0, 0]],
            "obstacle_radii": [0.1, 0.15],
        }
    )
    assert isinstance(cfg.omega, BoxSpec) and isinstance(cfg.d, UnionSpec)


def test_overrides_and_digest(tmp_path):
    a = load_config(CONFIGS / "demo.toml")
    b = load_config(CONFIGS / "demo.toml", {"resolution": 32, "eta": None})
    assert b.resolution == 32 and b.pulse.eta == 0.9
    assert a.digest() == load_config(CONFIGS / "demo.toml").digest()
    assert a.digest() != b.digest()


def test_trace_file_makes_run_blind(tmp_path):
    cfg = build_config({**BASE, "trace_file": "trace.bin"}, base_dir=tmp_path)
    assert cfg.blind and cfg.trace_file == tmp_path / "trace.bin"


def test_threads_env(monkeypatch):
    monkeypatch.delenv(THREADS_ENV, raising=False)
    assert resolve_threads(3) == 3
    assert resolve_threads(0) == 1
    monkeypatch.setenv(THREADS_ENV, "5")
    assert resolve_threads(1) == 5
    monkeypatch.setenv(THREADS_ENV, "many")
    with pytest.raises(ConfigError):
        resolve_threads(1)
