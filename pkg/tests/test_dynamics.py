import numpy as np
import pytest

from mpentangle.dynamics import (
    GROUND,
    NUMBER,
    SIGMA_MINUS,
    SIGMA_PLUS,
    BlochState,
    DriveParams,
    correlation_kernel,
    correlator_ee,
    correlator_g2,
    evolve_bloch,
    mixed_correlators,
    steady_state,
    two_time,
)
from mpentangle.errors import InvalidParameters, InvalidTimeGrid
from oracles import mollow_pe


def test_undriven_ground_is_stationary():
    states = evolve_bloch(DriveParams(0.0), GROUND, np.linspace(0, 50, 11))
    assert all(s.p_e == 0 and s.coh == 0 for s in states)


@pytest.mark.parametrize("x", [0.1, 0.5, 1.0, 2.0, 7.0])
def test_transient_matches_analytic_population(x):
    grid = np.linspace(0, 15, 61)
    states = evolve_bloch(DriveParams(x), None, grid)
    expected = [mollow_pe(x, t) for t in grid]
    np.testing.assert_allclose([s.p_e for s in states], expected, atol=1e-12)


@pytest.mark.parametrize("x", [0.3, 1.0, 4.0])
def test_expm_and_ode_paths_agree(x):
    grid = np.linspace(0, 20, 41)
    a = evolve_bloch(DriveParams(x), None, grid, method="expm")
    b = evolve_bloch(DriveParams(x), None, grid, method="ode")
    np.testing.assert_allclose([s.p_e for s in a], [s.p_e for s in b], atol=1e-9)
    np.testing.assert_allclose([s.coh for s in a], [s.coh for s in b], atol=1e-9)


def test_population_error_per_t1_is_small():
    # the ODE path at default tolerances against the analytic population
    grid = np.linspace(0, 10, 11)
    states = evolve_bloch(DriveParams(2.0), None, grid, method="ode")
    err = max(abs(s.p_e - mollow_pe(2.0, t)) for s, t in zip(states, grid))
    assert err < 1e-8


def test_long_time_limits():
    assert evolve_bloch(DriveParams(1.0), None, [0, 100])[-1].p_e == pytest.approx(1 / 3, abs=1e-10)
    assert evolve_bloch(DriveParams(200.0), None, [0, 100])[-1].p_e == pytest.approx(0.5, abs=1e-4)


def test_steady_state_closed_forms():
    assert steady_state(DriveParams(0.0)) == BlochState(0.0, 0j)
    assert steady_state(DriveParams(10.0)).p_e == pytest.approx(100 / 201, rel=1e-14)
    for x in (0.1, 1.0, 3.0, 10.0):
        ss = steady_state(DriveParams(x))
        assert abs(ss.coh) ** 2 == pytest.approx(x**2 / (1 + 2 * x**2) ** 2, rel=1e-12)
        late = evolve_bloch(DriveParams(x), None, [0.0, 200.0])[-1]
        assert abs(late.p_e - ss.p_e) < 1e-6 and abs(late.coh - ss.coh) < 1e-6


def test_steady_state_with_dephasing():
    p = DriveParams(1.5, dephasing=0.7)
    late = evolve_bloch(p, None, [0.0, 200.0])[-1]
    ss = steady_state(p)
    assert late.p_e == pytest.approx(ss.p_e, abs=1e-10)
    gamma2 = 0.5 + 0.7
    assert ss.p_e == pytest.approx(1.5**2 / (2 * gamma2 + 2 * 1.5**2))


def test_rejects_bad_grid_and_params():
    with pytest.raises(InvalidTimeGrid):
        evolve_bloch(DriveParams(1.0), None, [0.0, 2.0, 1.0])
    with pytest.raises(InvalidTimeGrid):
        evolve_bloch(DriveParams(1.0), None, [1.0, 2.0])
    for bad in (dict(rabi=-1), dict(rabi=1, t1=0), dict(rabi=1, efficiency=1.5), dict(rabi=1, background_rate=-1)):
        with pytest.raises(InvalidParameters):
            DriveParams(**bad)


def test_correlator_ee():
    p = DriveParams(1.0)
    assert correlator_ee(p, 30.0, 30.0).real == pytest.approx(1 / 3, abs=1e-10)
    assert correlator_ee(p, 30.0, 30.0).imag == pytest.approx(0.0, abs=1e-12)
    assert correlator_ee(p, 60.0, 120.0) == pytest.approx(1 / 9, abs=1e-10)
    assert correlator_ee(DriveParams(0.0), 1.0, 3.0) == 0
    with pytest.raises(InvalidTimeGrid):
        correlator_ee(p, 2.0, 1.0)


def test_correlator_g2():
    p = DriveParams(1.0)
    assert correlator_g2(p, 5.0, 5.0) == pytest.approx(0.0, abs=1e-15)
    assert correlator_g2(p, 40.0, 80.0) == pytest.approx(1 / 9, abs=1e-10)
    q = DriveParams(0.5)
    pe = steady_state(q).p_e
    for lag in (0.01, 0.5, 3.0):
        assert correlator_g2(q, 50.0, 50.0 + lag) == pytest.approx(pe * mollow_pe(0.5, lag), rel=1e-9)
    # onset is quadratic in the lag
    r = correlator_g2(q, 50.0, 50.02) / correlator_g2(q, 50.0, 50.01)
    assert r == pytest.approx(4.0, rel=2e-2)


def test_mixed_correlators():
    zero = mixed_correlators(DriveParams(0.0), 1.0, 2.0)
    assert all(v == 0 for v in zero)
    m = mixed_correlators(DriveParams(1.0), 60.0, 60.0)
    assert abs(m.coherence) == pytest.approx(1 / 3, abs=1e-10)
    rng = np.random.default_rng(1)
    for _ in range(20):
        t1, t2 = np.sort(rng.uniform(0, 10, 2))
        m = mixed_correlators(DriveParams(1.7), t1, t2)
        assert m.early_plus_late_pop == pytest.approx(np.conj(m.late_pop_early_minus), abs=1e-13)


def test_correlators_factorise_at_long_lag():
    # deviations measured relative to the equal-time value (normalised g1, g2)
    for x in (0.1, 0.3, 1.0, 5.0, 20.0):
        p = DriveParams(x)
        ss = steady_state(p)
        assert abs(correlator_ee(p, 50.0, 70.0) - abs(ss.coh) ** 2) <= 1e-4 * ss.p_e
        assert abs(correlator_g2(p, 50.0, 70.0) - ss.p_e**2) <= 1e-4 * ss.p_e**2


def test_kernel_matches_pointwise_two_time():
    p = DriveParams(1.3)
    k = correlation_kernel(p, 4.0, 0.5, left=SIGMA_PLUS, middle=NUMBER, right=SIGMA_MINUS)
    for i, j in [(0, 0), (1, 5), (3, 8), (8, 8)]:
        direct = two_time(p, i * 0.5, j * 0.5, SIGMA_PLUS, NUMBER, SIGMA_MINUS)
        assert k(i, j) == pytest.approx(direct, abs=1e-13)
    with pytest.raises(IndexError):
        k(3, 1)
    assert np.isnan(k.values[0, 3])
