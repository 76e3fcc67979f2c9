import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from enclosure import analytic_waves as aw
from enclosure.analytic_waves import SourcePulse
from enclosure.geometry import BallSpec, BoxSpec, surface_quadrature
from enclosure.reference_field import (
    AdmissibilityError,
    TimeGrid,
    TimeReversedNeumann,
    check_admissible,
    free_time_integral,
    j_star,
    laplace_radial,
    neumann_data,
    w_star_at,
    w_star_boundary,
)

UNIT = BallSpec((0, 0, 0), 1.0)
ORIGIN = (0.0, 0.0, 0.0)


# -- Neumann data ----------------------------------------------------------


def test_admissibility_rejects_short_horizon():
    with pytest.raises(AdmissibilityError, match="T - eta >= R_Omega"):
        check_admissible(UNIT, SourcePulse(ORIGIN, 0.5), 1.4)
    assert check_admissible(UNIT, SourcePulse(ORIGIN, 0.9), 1.9) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(AdmissibilityError):
        check_admissible(UNIT, SourcePulse(ORIGIN, 0.9), 1.9, strict=True)


def test_neumann_data_needs_admissible_horizon():
    q = surface_quadrature(UNIT, 4)
    with pytest.raises(AdmissibilityError):
        neumann_data(SourcePulse(ORIGIN, 0.5), q, TimeGrid(10, 0.14), omega=UNIT)


def test_neumann_value_at_node():
    pulse = SourcePulse(ORIGIN, 0.5)
    x = np.array([[1.0, 0.0, 0.0]])
    n = x.copy()
    got = TimeReversedNeumann(pulse, 1.6).flux(x, n, 0.7)[0]
    assert got == pytest.approx(float(aw.grad_v(pulse, x[0], 0.9)[0]), abs=1e-15)
    h = 1e-5
    fd = (aw.v(pulse, (1 + h, 0, 0), 0.9) - aw.v(pulse, (1 - h, 0, 0), 0.9)) / (2 * h)
    assert got == pytest.approx(float(fd), abs=1e-6)


def test_neumann_is_reindexed_forward_derivative():
    pulse = SourcePulse((0.1, 0.0, -0.1), 0.6)
    q = surface_quadrature(UNIT, 5)
    tg = TimeGrid(40, 0.05)
    f = neumann_data(pulse, q, tg).values
    for k, t in enumerate(tg.times()[:-1]):
        fwd = aw.normal_derivative(pulse, q.nodes, q.normals, tg.T - t)
        assert np.array_equal(f[k], fwd)
    assert np.all(f[-1] == 0.0)


def test_neumann_vanishes_at_both_ends():
    # strict lacuna: T - eta = 1.2 > R_Omega = 1
    pulse = SourcePulse(ORIGIN, 0.5)
    q = surface_quadrature(UNIT, 6)
    tg = TimeGrid(170, 0.01)
    f = neumann_data(pulse, q, tg, omega=UNIT).values
    t = tg.times()
    # boundary inside the lacuna at forward time T - t while T - t - eta > 1
    early = t < tg.T - pulse.eta - 1.0
    assert early.any() and np.all(f[early] == 0.0)
    # wave not yet arrived: T - t + eta < dist(p, boundary) = 1
    late = tg.T - t + pulse.eta < 1.0
    assert late.any() and np.all(f[late] == 0.0)
    assert np.any(f != 0.0)


# -- w* on the boundary ----------------------------------------------------


def test_w_star_small_tau_is_time_integral():
    pulse = SourcePulse(ORIGIN, 0.9)
    q = surface_quadrature(UNIT, 4)
    ws, _ = w_star_boundary(pulse, q, 1e-12, 1.9, omega=UNIT)
    assert np.allclose(ws.values, free_time_integral(pulse, q.nodes, 1.9), rtol=0, atol=1e-9)
    # direct composite trapezoid of v(x, s) on a fine grid, away from any breakpoint issue
    s = np.linspace(0.0, 1.9, 200001)[1:]
    direct = np.trapezoid(aw.v(pulse, np.array([1.0, 0, 0]), s), s)
    assert free_time_integral(pulse, (1.0, 0, 0), 1.9)[0] == pytest.approx(direct, abs=1e-9)


def test_w_star_linear_in_amplitude():
    q = surface_quadrature(UNIT, 4)
    one = w_star_boundary(SourcePulse(ORIGIN, 0.9), q, 5.0, 1.9)
    two = w_star_boundary(SourcePulse(ORIGIN, 0.9, amplitude=2.0), q, 5.0, 1.9)
    assert np.allclose(two[0].values, 2 * one[0].values, rtol=1e-15, atol=0)
    assert np.allclose(two[1].values, 2 * one[1].values, rtol=1e-15, atol=0)


def test_laplace_transform_converged():
    r = np.linspace(0.05, 1.8, 40)
    for kind in ("v", "dv_dr", "dv_dt"):
        base = laplace_radial(kind, r, 12.0, 1.9, 0.9)
        ref = laplace_radial(kind, r, 12.0, 1.9, 0.9, check=True, rtol=1e-13)
        scale = np.max(np.abs(ref))
        assert np.max(np.abs(base - ref)) <= 1e-12 * scale


@given(st.floats(0.01, 2.5), st.floats(0.0, 20.0), st.sampled_from(["v", "dv_dr", "dv_dt"]))
@settings(max_examples=40, deadline=None)
def test_laplace_transform_matches_adaptive_quadrature(r, tau, kind):
    from scipy.integrate import quad

    T, eta = 1.9, 0.9
    fn = {"v": aw.v_radial, "dv_dr": aw.dv_dr_radial, "dv_dt": aw.dv_dt_radial}[kind]
    kinks = [T - s for s in (r - eta, eta - r, r + eta, r) if 0 < T - s < T]
    ref, _ = quad(lambda t: math.exp(-tau * t) * float(fn(r, T - t, eta)), 0, T, points=kinks or None, epsabs=1e-14, limit=200)
    assert laplace_radial(kind, r, tau, T, eta)[0] == pytest.approx(ref, abs=1e-11)


@given(st.floats(2.0, 40.0))
@settings(max_examples=15)
def test_w_star_decreases_with_tau(tau):
    """Where v(x, T - t) keeps one sign the transform shrinks as tau grows."""
    pulse = SourcePulse(ORIGIN, 0.9)
    q = surface_quadrature(UNIT, 4)
    T = 1.9
    t = np.linspace(0, T, 400)[:-1]
    vals = np.stack([aw.v(pulse, q.nodes, T - s) for s in t])
    one_sign = np.all(vals >= 0, axis=0) | np.all(vals <= 0, axis=0)
    a = w_star_boundary(pulse, q, tau, T)[0].values
    b = w_star_boundary(pulse, q, tau * 1.1, T)[0].values
    assert one_sign.any()
    assert np.all(np.abs(b[one_sign]) <= np.abs(a[one_sign]))


def test_normal_derivative_matches_finite_difference():
    rng = np.random.default_rng(3)
    pulse = SourcePulse((0.05, 0.0, 0.0), 0.9)
    q = surface_quadrature(UNIT, 6)
    tau, T = 6.0, 1.95
    pick = rng.choice(len(q), 10, replace=False)
    _, dn = w_star_boundary(pulse, q, tau, T)
    h = 1e-4
    for k in pick:
        x, n = q.nodes[k], q.normals[k]
        plus = w_star_at(pulse, x + h * n, tau, T)[0][0]
        minus = w_star_at(pulse, x - h * n, tau, T)[0][0]
        assert dn.values[k] == pytest.approx((plus - minus) / (2 * h), abs=1e-5 * max(1.0, abs(dn.values[k])))


_D2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0


def test_w_star_solves_modified_helmholtz():
    """(Laplacian - tau^2) w* = v_t(x, T) - tau v(x, T) - e^{-tau T} Psi(x)."""
    pulse = SourcePulse(ORIGIN, 0.6)
    tau, T = 3.0, 1.7
    rng = np.random.default_rng(5)
    h = 1e-2
    for r in (0.2, 0.45, 0.9, 1.3, 2.0):  # away from r = eta and r = T +- eta
        d = rng.normal(size=3)
        x = r * d / np.linalg.norm(d)
        lap = 0.0
        for axis in range(3):
            e = np.zeros(3)
            e[axis] = h
            pts = np.array([x + k * e for k in range(-2, 3)])
            lap += _D2 @ w_star_at(pulse, pts, tau, T)[0] / h**2
        w0 = w_star_at(pulse, x, tau, T)[0][0]
        rhs = aw.dv_dt(pulse, x, T) - tau * aw.v(pulse, x, T) - math.exp(-tau * T) * aw.psi(pulse, x)
        assert lap - tau**2 * w0 == pytest.approx(float(rhs), abs=1e-6)


# -- J* --------------------------------------------------------------------


def test_j_star_positive_and_translation_covariant():
    pulse = SourcePulse(ORIGIN, 0.9)
    D = BallSpec((0.1, 0.0, 0.0), 0.25)
    a = j_star(pulse, D, 8.0, 1.9, omega=UNIT)
    shift = np.array([2.0, -1.0, 0.5])
    moved = j_star(SourcePulse(tuple(shift), 0.9), D.translated(shift), 8.0, 1.9, omega=UNIT.translated(shift))
    assert a > 0
    assert moved == pytest.approx(a, rel=1e-8)


def test_j_star_checks_geometry():
    from enclosure.geometry import GeometryError

    with pytest.raises(GeometryError):
        j_star(SourcePulse(ORIGIN, 0.9), BallSpec((0.9, 0, 0), 0.3), 5.0, 1.9, omega=UNIT)
    with pytest.raises(AdmissibilityError):
        j_star(SourcePulse(ORIGIN, 0.9), BallSpec(ORIGIN, 0.3), 5.0, 1.5, omega=UNIT)


def test_j_star_box_domain_accepted():
    box = BoxSpec((-1, -1, -1), (1, 1, 1))
    assert j_star(SourcePulse(ORIGIN, 0.9), BallSpec(ORIGIN, 0.3), 5.0, 0.9 + math.sqrt(3), omega=box) > 0


def test_j_star_decay_rate_example():
    """Difference-quotient slope of log J* between tau = 15 and 30 vs -2((T - eta) - R_D) = -1.4."""
    pulse = SourcePulse(ORIGIN, 0.9)
    D = BallSpec(ORIGIN, 0.3)
    T = 1.9
    J15, J30 = (j_star(pulse, D, tau, T) for tau in (15.0, 30.0))
    slope = (math.log(J30) - math.log(J15)) / 15.0
    assert abs(slope - (-1.4)) <= 0.14, f"slope {slope:.4f} is {abs(slope + 1.4) / 1.4:.1%} from -1.4"


def test_j_star_slope_approaches_target():
    """The same quotient over doubling windows moves monotonically toward -1.4."""
    pulse = SourcePulse(ORIGIN, 0.9)
    D = BallSpec(ORIGIN, 0.3)
    taus = (15.0, 30.0, 60.0, 120.0)
    logs = [math.log(j_star(pulse, D, t, 1.9)) for t in taus]
    slopes = [(b - a) / (tb - ta) for a, b, ta, tb in zip(logs, logs[1:], taus, taus[1:])]
    gaps = [abs(s + 1.4) for s in slopes]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 0.14
