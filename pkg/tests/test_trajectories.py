import numpy as np
import pytest

from mpentangle.counting import counting_stats, mean_general
from mpentangle.dynamics import DriveParams, evolve_bloch
from mpentangle.errors import ChannelIncompleteness, NormUnderflow
from mpentangle.network import DetectionModel
from mpentangle.trajectories import (
    compiled_available,
    empirical_distribution,
    jump_channels,
    poisson_chisquare,
    simulate,
    thin,
)
from mpentangle.trajectories.simulate import choose_step

needs_kernel = pytest.mark.skipif(not compiled_available(), reason="compiled kernel not built")


def test_pp_records_nothing():
    p = DriveParams(3.0)
    ens = simulate("PP", p, p, 50.0, 100, seed=1)
    assert not ens.d_count.any() and not ens.b_count.any() and not ens.loss_count.any()


@pytest.mark.parametrize("state", ["PM", "MP", "MM"])
def test_channels_complete(state):
    p = DriveParams(2.0, efficiency=0.4, dephasing=0.3)
    jump_channels(state, p, DriveParams(1.0, t1=1.7, efficiency=0.9)).check_complete()
    jump_channels(state, p, p, include_spectators=True).check_complete()


def test_channel_dimensions():
    p = DriveParams(2.0)
    assert jump_channels("PM", p, p).dim == 2
    assert jump_channels("MM", p, p).dim == 4
    assert jump_channels("PP", p, p).dim == 1


def test_overfull_ports_rejected():
    p = DriveParams(2.0)
    with pytest.raises(ChannelIncompleteness):
        jump_channels("MM", p, p, DetectionModel(amp=(0.9, 0.9)))


def test_step_bound_enforced():
    p = DriveParams(2.0)
    ch = jump_channels("MM", p, p)
    assert choose_step(ch) <= 0.05
    with pytest.raises(NormUnderflow):
        simulate("MM", p, p, 10.0, 2, seed=0, step=0.5)


def test_seed_determinism_and_chunking():
    p = DriveParams(2.0, efficiency=0.5)
    a = simulate("MM", p, p, 20.0, 300, seed=99)
    b = simulate("MM", p, p, 20.0, 300, seed=99, chunk_size=37, n_jobs=3)
    c = simulate("MM", p, p, 20.0, 100, seed=99)
    np.testing.assert_array_equal(a.d_count, b.d_count)
    np.testing.assert_array_equal(a.loss_count, b.loss_count)
    np.testing.assert_array_equal(a.d_count[:100], c.d_count)
    d = simulate("MM", p, p, 20.0, 300, seed=100)
    assert not np.array_equal(a.d_count, d.d_count)


@needs_kernel
@pytest.mark.parametrize("state", ["PM", "MM"])
def test_backends_identical(state):
    p1, p2 = DriveParams(2.5, efficiency=0.6, dephasing=0.2), DriveParams(1.0, t1=0.8)
    a = simulate(state, p1, p2, 15.0, 64, seed=5, backend="compiled")
    b = simulate(state, p1, p2, 15.0, 64, seed=5, backend="python")
    for key in a.records:
        np.testing.assert_array_equal(a.records[key], b.records[key])
    np.testing.assert_allclose(a.populations, b.populations, atol=1e-12)


def test_mean_matches_deterministic():
    p = DriveParams(2.0)
    ens = simulate("MM", p, p, 200.0, 10_000, seed=2012)
    emp = empirical_distribution(ens, n_boot=300)
    assert abs(emp.mean - mean_general("MM", p, p, 200.0)) < 3 * emp.se_mean


def test_unconditional_populations_match_bloch():
    p = DriveParams(1.3)
    t = 2.5
    ens = simulate("MM", p, p, t, 20_000, seed=3)
    pe = evolve_bloch(p, None, [0.0, t])[-1].p_e
    pops = ens.populations
    for s in range(2):
        se = pops[:, s].std(ddof=1) / np.sqrt(len(pops))
        assert abs(pops[:, s].mean() - pe) < 3 * se


def test_thinning_matches_direct_simulation():
    full = simulate("MM", DriveParams(2.0), DriveParams(2.0), 40.0, 6000, seed=11)
    thinned = thin(full, 0.3, seed=12)
    p = DriveParams(2.0, efficiency=0.3)
    direct = simulate("MM", p, p, 40.0, 6000, seed=13)
    a, b = empirical_distribution(thinned, n_boot=300), empirical_distribution(direct, n_boot=300)
    assert abs(a.mean - b.mean) < 3 * np.hypot(a.se_mean, b.se_mean)
    assert abs(a.variance - b.variance) < 3 * np.hypot(a.se_variance, b.se_variance)
    assert thinned.d_count.sum() + thinned.loss_count.sum() == full.d_count.sum() + full.loss_count.sum()


def test_background_counts_are_seeded():
    p = DriveParams(2.0, background_rate=0.05)
    a = simulate("PP", p, p, 100.0, 2000, seed=4)
    b = simulate("PP", p, p, 100.0, 2000, seed=4)
    np.testing.assert_array_equal(a.d_count, b.d_count)
    assert a.d_count.mean() == pytest.approx(10.0, rel=0.05)


def test_empirical_distribution_of_zeros():
    emp = empirical_distribution(np.zeros(50, dtype=int))
    assert emp.pmf.tolist() == [1.0]
    assert emp.mean == 0 and emp.variance == 0 and emp.q is None
    with pytest.raises(ValueError):
        empirical_distribution(np.array([], dtype=int))


def test_empirical_distribution_moments():
    rng = np.random.default_rng(0)
    data = rng.poisson(6.0, 4000)
    emp = empirical_distribution(data, n_boot=500, seed=1)
    assert emp.mean == pytest.approx(data.mean())
    assert emp.variance == pytest.approx(data.var(ddof=1))
    assert emp.se_mean == pytest.approx(np.sqrt(6.0 / 4000), rel=0.15)
    assert abs(emp.q) < 4 * emp.se_q


def test_low_efficiency_counts_are_poissonian():
    p = DriveParams(1.0, efficiency=0.01)
    ens = simulate("PM", p, p, 2000.0, 2000, seed=21)
    stat, pval, dof = poisson_chisquare(ens)
    assert dof >= 2 and pval > 0.05


def test_csv_dump(tmp_path):
    p = DriveParams(2.0)
    ens = simulate("MM", p, p, 5.0, 4, seed=1)
    text = ens.to_csv(tmp_path / "records.csv")
    lines = (tmp_path / "records.csv").read_text().splitlines()
    assert text.splitlines() == lines
    assert lines[0] == "index,d_count,b_count,loss_count" and len(lines) == 5
    assert ens.summary()["n_traj"] == 4


@pytest.mark.slow
def test_sub_poissonian_e_branch_oracle():
    p = DriveParams(1 / np.sqrt(2))
    ens = simulate("PM", p, p, 1000.0, 100_000, seed=7)
    emp = empirical_distribution(ens, n_boot=1000)
    det = counting_stats("PM", p, p, 1000.0)
    assert emp.q < 0
    assert abs(emp.q - det.q) < 3 * emp.se_q
