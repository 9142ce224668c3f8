import numpy as np
import pytest

from mpentangle.counting import (
    CountingStats,
    counting_series,
    counting_stats,
    longtime_ratio,
    mandel_q,
    mean_general,
    mean_longtime,
    richardson_check,
    variance,
    variance_factorized,
)
from mpentangle.dynamics import DriveParams
from mpentangle.errors import InvalidParameters, InvalidTimeGrid, QuadratureResolutionError, UndefinedQ
from mpentangle.network import JointSpinState
from oracles import count_moments, longtime_q_single

ACTIVE = {"PM": (0, 1), "MP": (1, 0), "MM": (1, 1)}


def test_closed_form_values():
    assert mean_longtime("PP", 3.0, 1.0, 100) == 0.0
    assert mean_longtime("PM", 1.0, 1.0, 1000) == pytest.approx(1000 / 12)
    assert mean_longtime("PM", 1e6, 1.0, 800) == pytest.approx(100.0, rel=1e-9)
    assert mean_longtime("MM", 1e6, 1.0, 800) == pytest.approx(200.0, rel=1e-9)
    assert longtime_ratio(0.0) == 4.0
    assert longtime_ratio(1e6) == pytest.approx(2.0)
    with pytest.raises(InvalidParameters):
        mean_longtime("PM", 1.0, 1.0, -1.0)


@pytest.mark.parametrize("state", ["PM", "MP", "MM"])
@pytest.mark.parametrize("x,eta,t", [(0.4, 1.0, 12.0), (2.0, 0.3, 18.0), (5.0, 1.0, 9.0)])
def test_matches_number_resolved_oracle(state, x, eta, t):
    m, v = count_moments(ACTIVE[state], (x, x), eta, t)
    p = DriveParams(x, efficiency=eta)
    s = counting_stats(state, p, p, t)
    assert s.mean == pytest.approx(m, rel=1e-10)
    assert s.variance == pytest.approx(v, rel=1e-10)


def test_unequal_qubits_match_oracle():
    p1, p2 = DriveParams(2.0, efficiency=0.8), DriveParams(3.0, t1=1.3, efficiency=0.8)
    m, v = count_moments((1, 1), (2.0, 3.0), 0.8, 12.0, t1=(1.0, 1.3))
    s = counting_stats("MM", p1, p2, 12.0)
    assert (s.mean, s.variance) == pytest.approx((m, v), rel=1e-10)


def test_three_variance_routes_agree():
    p = DriveParams(1.5, efficiency=0.7)
    for state in ("PM", "MM"):
        exact = variance(state, p, p, 20.0)
        trap = variance(state, p, p, 20.0, method="trapezoid")
        _, fact = variance_factorized(state, p, p, 20.0)
        assert trap == pytest.approx(exact, rel=5e-4)
        assert fact == pytest.approx(trap, rel=1e-10)


def test_richardson_check_passes_at_default_step():
    p = DriveParams(2.0)
    out = richardson_check("MM", p, p, 30.0)
    assert out["ok"] and out["rel_change"] < 5e-3


def test_coarse_quadrature_rejected():
    p = DriveParams(1.0)
    with pytest.raises(QuadratureResolutionError):
        variance("PM", p, p, 10.0, method="trapezoid", dt=0.2)


def test_general_mean_approaches_closed_form():
    for state in ("PM", "MM"):
        for x in (0.5, 1.0, 3.0, 10.0):
            p = DriveParams(x)
            closed = mean_longtime(state, x, 1.0, 200.0)
            assert abs(mean_general(state, p, p, 200.0) - closed) / closed < 1e-2


def test_mismatched_lifetimes_large_field():
    p1, p2 = DriveParams(30.0), DriveParams(30.0, t1=1.25)
    t = 2000.0
    assert mean_general("PM", p1, p2, t) == pytest.approx(t / 8 / 1.25, rel=1e-2)
    assert mean_general("MP", p1, p2, t) == pytest.approx(t / 8, rel=1e-2)
    assert mean_general("MM", p1, p2, t) == pytest.approx(t / 8 * (1 + 1 / 1.25), rel=1e-2)


def test_zero_time_and_pp():
    p = DriveParams(2.0)
    for state in JointSpinState:
        assert mean_general(state, p, p, 0.0) == 0.0
    s = counting_stats("PP", p, p, 100.0)
    assert s.mean == 0 and s.variance == 0 and s.q is None
    with pytest.raises(UndefinedQ):
        mandel_q("PP", p, p, 100.0)
    with pytest.raises(InvalidTimeGrid):
        mean_general("PM", p, p, -1.0)


def test_longtime_q_single_emitter():
    p = DriveParams(1 / np.sqrt(2))
    assert mandel_q("PM", p, p, 1000.0) == pytest.approx(-3 / 16, abs=2e-3)
    for x, eta in [(0.3, 1.0), (2.0, 0.5)]:
        p = DriveParams(x, efficiency=eta)
        # finite-time correction is O(T1/t)
        assert mandel_q("PM", p, p, 4000.0) == pytest.approx(longtime_q_single(x, eta / 4), abs=1e-3)


def test_q_scales_with_efficiency():
    for state in ("PM", "MM"):
        q1 = mandel_q(state, DriveParams(2.0), DriveParams(2.0), 500.0)
        qs = mandel_q(state, DriveParams(2.0, efficiency=0.01), DriveParams(2.0, efficiency=0.01), 500.0)
        assert qs == pytest.approx(0.01 * q1, rel=5e-2)


def test_background_adds_poisson_counts():
    p = DriveParams(2.0, background_rate=0.05)
    q = DriveParams(2.0)
    s_bg = counting_stats("PM", p, p, 100.0)
    s = counting_stats("PM", q, q, 100.0)
    assert s_bg.mean - s.mean == pytest.approx(2 * 0.05 * 100.0)
    assert s_bg.variance - s.variance == pytest.approx(2 * 0.05 * 100.0)
    pp = counting_stats("PP", p, p, 100.0)
    assert pp.mean == pytest.approx(10.0) and pp.variance == pytest.approx(10.0)


def test_series_matches_pointwise():
    p = DriveParams(1.2, efficiency=0.6)
    grid = [0.0, 3.0, 7.5, 40.0]
    means, variances = counting_series("MM", p, p, grid)
    for t, m, v in zip(grid, means, variances):
        assert m == pytest.approx(mean_general("MM", p, p, t), rel=1e-12, abs=1e-15)
        assert v == pytest.approx(variance("MM", p, p, t), rel=1e-12, abs=1e-15)
    with pytest.raises(InvalidTimeGrid):
        counting_series("MM", p, p, [2.0, 1.0])


def test_counting_stats_validation():
    with pytest.raises(ValueError):
        CountingStats(-1.0, 0.0, 1.0, JointSpinState.PM)
    s = CountingStats(4.0, 2.0, 1.0, JointSpinState.PM)
    assert s.q == -0.5 and s.sd == pytest.approx(np.sqrt(2))
    assert s.to_dict()["state"] == "PM"
