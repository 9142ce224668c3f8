import numpy as np
import pytest

from mpentangle.errors import LaserLeakage, NetworkTopologyError, NonUnitarySplitter
from mpentangle.network import (
    DetectionModel,
    Element,
    JointSpinState,
    ModeNetwork,
    beam_splitter,
    build_network,
    intensities,
    default_network,
    propagate,
    state_participation,
)


def test_splitter_is_unitary():
    for r in (0.0, 0.2, 0.5, 0.9):
        u = beam_splitter(r)
        np.testing.assert_allclose(u.conj().T @ u, np.eye(2), atol=1e-15)


def test_default_detector_amplitudes():
    model = build_network()
    assert model.amp == pytest.approx((0.5, 0.5), abs=1e-15)
    assert model.laser_amp_at_d == 0
    assert model.conjugate_amp == pytest.approx((0.5, -0.5))


def test_laser_cancels_only_with_both_shifters():
    net = default_network()
    d = propagate(net).terminal["d"]
    assert abs(d[0]) < 1e-15
    with pytest.raises(LaserLeakage):
        build_network(net.without("phase", "c"))
    with pytest.raises(LaserLeakage):
        build_network(net.without("phase", "a1"))
    # residual laser amplitude at d
    leak_c = abs(propagate(net.without("phase", "c")).terminal["d"][0])
    leak_a = abs(propagate(net.without("phase", "a1")).terminal["d"][0])
    assert leak_c == pytest.approx(1.0) and leak_a == pytest.approx(0.5)


def test_energy_is_conserved():
    total = sum(intensities(default_network()).values())
    np.testing.assert_allclose(total, [1.0, 1.0, 1.0], atol=1e-14)


def test_swap_qubits_swaps_amplitudes():
    model = build_network(default_network().swap_qubits())
    assert model.amp == pytest.approx(build_network().swapped().amp)


def test_round_trip_through_dicts():
    net = default_network()
    again = ModeNetwork.from_dicts(net.to_dicts())
    assert build_network(again) == build_network(net)


def test_topology_errors():
    elements = list(default_network().elements)
    with pytest.raises(NetworkTopologyError):
        propagate(ModeNetwork(tuple(e for e in elements if e.kind != "detector")))
    with pytest.raises(NetworkTopologyError):
        propagate(ModeNetwork(tuple(e for e in elements if not (e.kind == "emitter" and e.qubit == 2))))
    with pytest.raises(NetworkTopologyError):
        ModeNetwork.from_dicts([{"type": "mirror", "mode": "a"}])
    with pytest.raises(NetworkTopologyError, match=r"network.elements\[0\]"):
        ModeNetwork.from_dicts([{"type": "splitter", "inputs": ["a", "b"]}])


def test_non_unitary_splitter_rejected():
    bad = Element("splitter", name="bad", inputs=("laser", "vac1"), outputs=("m", "c"), matrix=np.eye(2) * 0.9)
    elements = list(default_network().elements)
    elements[1] = bad
    with pytest.raises(NonUnitarySplitter):
        propagate(ModeNetwork(tuple(elements)))


def test_joint_states():
    assert [s.value for s in JointSpinState] == ["++", "+-", "-+", "--"]
    assert JointSpinState.parse("E") is JointSpinState.PM
    assert JointSpinState.parse("--") is JointSpinState.MM
    assert state_participation("PM") == (0, 1)
    assert state_participation("MM") == (1, 1)
    with pytest.raises(ValueError):
        JointSpinState.parse("x")


def test_rate_prefactor():
    from mpentangle.dynamics import DriveParams

    assert DetectionModel().rate_prefactor(DriveParams(1.0, t1=2.0, efficiency=0.5)) == 0.25
