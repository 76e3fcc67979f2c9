import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import _sims
from enclosure.forward_solver import BoundaryTrace
from enclosure.indicator import (
    FLOOR_FACTOR,
    TABLE_COLUMNS,
    IndicatorSeries,
    TauGrid,
    compute_decomposition,
    compute_indicator,
    discretization_floor,
    noise_floor,
    read_table,
    rounding_floor,
    write_floor_table,
    write_table,
)
from enclosure.reference_field import TimeGrid

T = 1.9
RES = 32
MID = _sims.TAU_MID


@pytest.fixture(scope="module")
def pair():
    tr_d, _ = _sims.trace(RES, T, True)
    tr_0, _ = _sims.trace(RES, T, False)
    return tr_d, tr_0


# -- tau grid and series ---------------------------------------------------


def test_tau_grid_validation():
    with pytest.raises(ValueError):
        TauGrid([])
    with pytest.raises(ValueError):
        TauGrid([1.0, 0.0])
    with pytest.raises(ValueError):
        TauGrid([2.0, 1.0])
    with pytest.raises(ValueError):
        TauGrid.from_range(1.0, 2.0, 5, "cubic")
    g = TauGrid.from_range(2.0, 40.0, 16)
    assert g.values[0] == 2.0 and g.values[-1] == pytest.approx(40.0)
    assert np.allclose(np.diff(np.log(g.values)), math.log(20.0) / 15)


@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3))
def test_log_indicator_defined_exactly_where_positive(vals):
    s = IndicatorSeries(TauGrid([1.0, 2.0, 3.0]), vals, T)
    pos = s.I > 0
    assert np.array_equal(np.isfinite(s.log_indicator), pos)
    assert np.allclose(s.log_indicator[pos], np.log(s.I[pos]) / s.tau.values[pos])
    nz = s.I != 0
    assert np.all(np.isfinite(s.scaled_log[nz]))


def test_scaled_log_never_forms_the_product():
    s = IndicatorSeries(TauGrid([400.0]), [1e-300], T)
    # e^{tau T} = e^{760} overflows, its log does not
    assert s.scaled_log[0] == pytest.approx(math.log(1e-300) + 760.0)
    assert s.scaled_sign[0] == 1.0


def test_admissible_uses_floor():
    s = IndicatorSeries(TauGrid([1.0, 2.0, 3.0]), [1.0, 4.0, -10.0], T, floor=np.ones(3))
    assert s.admissible.tolist() == [False, False, False]
    s.floor = np.full(3, 0.1)
    assert s.admissible.tolist() == [True, True, False]


# -- compute_indicator -----------------------------------------------------


def test_tau_grid_independence(pair):
    tr_d, tr_0 = pair
    a = compute_indicator(tr_d, _sims.PULSE, TauGrid([3.0, MID, 25.0]), reference="background", background=tr_0)
    b = compute_indicator(tr_d, _sims.PULSE, TauGrid([MID, 11.0]), reference="background", background=tr_0, threads=2)
    assert a.I[1] == pytest.approx(b.I[0], rel=1e-13, abs=0)
    c = compute_indicator(tr_d, _sims.PULSE, TauGrid([2.5, MID]), reference="analytic")
    d = compute_indicator(tr_d, _sims.PULSE, TauGrid([MID]), reference="analytic", threads=3)
    assert c.I[1] == pytest.approx(d.I[0], rel=1e-13, abs=0)


def test_surface_order_doubling():
    # at the demo resolution; on coarser grids the sampling noise of the
    # trace itself (not the surface rule) dominates the change
    tg = TauGrid([MID])
    I = []
    for order in (12, 24):
        tr_d, _ = _sims.trace(64, T, True, order=order)
        tr_0, _ = _sims.trace(64, T, False, order=order)
        I.append(compute_indicator(tr_d, _sims.PULSE, tg, reference="background", background=tr_0).I[0])
    assert abs(I[1] - I[0]) / abs(I[1]) < 0.005


def test_indicator_input_errors(pair):
    tr_d, tr_0 = pair
    g = TauGrid([5.0])
    with pytest.raises(ValueError, match="horizon"):
        compute_indicator(tr_d, _sims.PULSE, g, T=2.0)
    with pytest.raises(ValueError, match="background trace"):
        compute_indicator(tr_d, _sims.PULSE, g, reference="background")
    with pytest.raises(ValueError, match="unknown reference"):
        compute_indicator(tr_d, _sims.PULSE, g, reference="mirror")
    other, _ = _sims.trace(RES, T, False, order=8)
    with pytest.raises(ValueError, match="quadratures"):
        compute_indicator(tr_d, _sims.PULSE, g, reference="background", background=other)
    short = BoundaryTrace(tr_0.quadrature, tr_0.samples[:-1], TimeGrid(tr_0.time_grid.n_steps - 1, tr_0.time_grid.dt))
    with pytest.raises(ValueError):
        compute_indicator(tr_d, _sims.PULSE, g, reference="background", background=short)


def test_null_indicator_and_floor_shrink():
    g = TauGrid.from_range(2.0, 40.0, 6)
    floors, ratios = [], []
    for n in (24, 48):
        tr_0, _ = _sims.trace(n, T, False)
        fl = discretization_floor(tr_0, _sims.PULSE, g)
        I0 = compute_indicator(tr_0, _sims.PULSE, g, reference="analytic").I
        floors.append(fl)
        ratios.append(np.max(np.abs(I0) / fl))
        # the background indicator of the free run is identically zero
        assert np.all(compute_indicator(tr_0, _sims.PULSE, g, reference="background", background=tr_0).I == 0.0)
    assert np.all(floors[1] < floors[0])
    # the floor omits the time-quadrature error, so allow the admissibility factor
    assert max(ratios) < FLOOR_FACTOR


def test_rounding_floor_zero_for_identical_traces(pair):
    _, tr_0 = pair
    g = TauGrid([4.0, 8.0])
    assert np.all(rounding_floor(tr_0, tr_0, _sims.PULSE, g) == 0.0)
    with pytest.raises(ValueError):
        noise_floor(tr_0, _sims.PULSE, g, "background")


def test_noise_floor_below_signal(pair):
    tr_d, tr_0 = pair
    g = TauGrid([4.0, MID, 20.0])
    fl = noise_floor(tr_0, _sims.PULSE, g, "background", trace=tr_d)
    I = compute_indicator(tr_d, _sims.PULSE, g, reference="background", background=tr_0).I
    assert np.all(fl > 0) and np.all(np.abs(I) > 5 * fl)


# -- table -----------------------------------------------------------------


def test_table_header_once_and_round_trip(tmp_path):
    s = IndicatorSeries(TauGrid([1.0, 2.0, 4.0]), [0.5, -1e-20, 0.0], T, floor=np.array([0.01, 0.01, 0.01]))
    path = write_table(s, tmp_path / "indicator.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(TABLE_COLUMNS)
    assert sum(line.startswith("tau,") for line in lines) == 1
    assert len(lines) == 4
    back = read_table(path, T)
    assert np.array_equal(back.I, s.I) and np.array_equal(back.tau.values, s.tau.values)
    fl = write_floor_table(s, tmp_path / "floor.csv").read_text().splitlines()
    assert fl[0] == "tau,floor,admissible" and fl[1].endswith(",1") and fl[2].endswith(",0")


def test_read_table_rejects_foreign_header(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("t,value\n1,2\n")
    with pytest.raises(ValueError, match="header"):
        read_table(p, T)


# -- decomposition ---------------------------------------------------------

SWEEP = (3.0, 6.0, MID, 14.0, 20.0, 30.0, 40.0)


@pytest.fixture(scope="module")
def volumes():
    return _sims.volume_pair(RES, T, SWEEP)


@pytest.mark.parametrize("reference", ["background", "analytic"])
def test_decomposition_terms_nonnegative(volumes, reference):
    _, vol_d, _, vol_0, tg = volumes
    for tau in SWEEP:
        dec = compute_decomposition(vol_d, _sims.PULSE, tau, T, reference=reference, background=vol_0, time_grid=tg)
        assert dec.J_star >= 0 and dec.E >= 0
        assert dec.I_reassembled == pytest.approx(dec.J_star + dec.E + dec.script_R)
        assert set(dec.as_dict()) >= {"J_star", "E", "script_R", "I_reassembled", "I_faces"}


def test_dominance_ratio_bounded(volumes):
    """E / (tau^2 J* + tau^2 e^{-2 tau T}) over the sweep: bounded, not growing with tau."""
    _, vol_d, _, vol_0, tg = volumes
    ratios = []
    for tau in SWEEP:
        dec = compute_decomposition(vol_d, _sims.PULSE, tau, T, background=vol_0, time_grid=tg)
        ratios.append(dec.E / (tau**2 * dec.J_star + tau**2 * math.exp(-2 * tau * T)))
    ratios = np.array(ratios)
    assert np.all(np.isfinite(ratios)) and np.all(ratios > 0)
    # bounded: the upper half of the sweep never exceeds the lower-half peak
    half = len(SWEEP) // 2
    assert ratios[half:].max() <= ratios[:half].max()
    assert ratios.max() < 0.05


def test_decomposition_errors(volumes):
    _, vol_d, _, vol_0, tg = volumes
    with pytest.raises(ValueError, match="not accumulated"):
        compute_decomposition(vol_d, _sims.PULSE, 7.77, T, background=vol_0)
    with pytest.raises(ValueError, match="obstacle-free"):
        compute_decomposition(vol_d, _sims.PULSE, MID, T)
    with pytest.raises(ValueError, match="obstacle"):
        compute_decomposition(vol_0, _sims.PULSE, MID, T, background=vol_0)
    with pytest.raises(ValueError, match="unknown reference"):
        compute_decomposition(vol_d, _sims.PULSE, MID, T, reference="mirror")
