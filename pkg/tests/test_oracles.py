import time

import numpy as np
import pytest

from enclosure import closed_forms as cf
from enclosure.oracles import LEVELS, check_g_endpoint, run_oracle_suite


def test_quick_suite_passes_within_a_minute():
    t0 = time.perf_counter()
    report = run_oracle_suite("quick", seed=0)
    elapsed = time.perf_counter() - t0
    lines = report.lines()
    assert report.ok, "\n".join(lines)
    # a header plus one line per check
    assert len(lines) == len(report.checks) + 1
    assert len({c.name for c in report.checks}) == len(report.checks)
    assert elapsed < 60.0


def test_suite_rejects_unknown_level():
    assert "quick" in LEVELS and "full" in LEVELS
    with pytest.raises(ValueError):
        run_oracle_suite("medium")


def test_endpoint_near_cancellation():
    """eta*tau within a few ulps of 2: the polynomial still matches the exact rational value."""
    from fractions import Fraction

    for k in range(1, 6):
        tau = 4.0
        eta = 0.5 + k * 2.0**-52
        P = cf.LaplaceParams(tau, eta + 1.0, eta)
        exact = float((Fraction(eta) - 2 / Fraction(tau)) / Fraction(tau))
        assert float(cf.g_poly(P, P.T - P.eta)) == pytest.approx(exact, rel=1e-13)


@pytest.mark.parametrize("seed", [1, 7, 42])
def test_endpoint_check_any_seed(seed):
    assert check_g_endpoint(np.random.default_rng(seed)).passed


def test_singular_ball_potential_oracle_converges():
    tau, eta, x = 6.0, 0.8, np.array([0.2, -0.1, 0.15])
    exact = float(cf.ball_potential(-1, tau, eta, x))
    errs = [abs(cf.ball_potential_oracle(-1, tau, eta, x, order=n) - exact) / exact for n in (32, 64)]
    assert errs[1] < errs[0] / 20
    assert errs[1] < 1e-4
