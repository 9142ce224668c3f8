"""Jump channels routing each qubit's emission to the detector and elsewhere."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dynamics import IDENTITY, NUMBER, SIGMA_MINUS, DriveParams
from ..errors import ChannelIncompleteness
from ..network import DetectionModel, JointSpinState, state_participation

DETECTOR, CONJUGATE, LOSS, OTHER = range(4)
CATEGORY_NAMES = ("d", "b", "loss", "other")


@dataclass(frozen=True)
class Channel:
    name: str
    operator: np.ndarray
    category: int


@dataclass(frozen=True)
class JumpChannelSet:
    """Hamiltonian and collapse operators on the space of the driven atoms.

    ``atoms`` lists the qubit indices (0 or 1) that carry a two-level factor
    in the state vector, in tensor order.  Spectator qubits in |+> are left
    out entirely.
    """

    atoms: tuple[int, ...]
    hamiltonian: np.ndarray
    channels: tuple[Channel, ...]
    decay: tuple[float, ...]
    dephasing: tuple[float, ...]

    @property
    def dim(self) -> int:
        return 2 ** len(self.atoms)

    def lowering(self, k: int) -> np.ndarray:
        return _embed(SIGMA_MINUS, k, len(self.atoms))

    def number(self, k: int) -> np.ndarray:
        return _embed(NUMBER, k, len(self.atoms))

    def decay_sum(self) -> np.ndarray:
        return sum((c.operator.conj().T @ c.operator for c in self.channels), np.zeros((self.dim, self.dim), complex))

    def effective_hamiltonian(self) -> np.ndarray:
        return self.hamiltonian - 0.5j * self.decay_sum()

    def check_complete(self, atol: float = 1e-12) -> None:
        """Every atom must decay at exactly its own rate, with no cross terms.

        Checks both ``sum L^dag L`` and the jump superoperator
        ``sum L (.) L^dag`` against the atom-local dissipator.
        """
        target = np.zeros((self.dim, self.dim), dtype=complex)
        target_jump = np.zeros((self.dim**2, self.dim**2), dtype=complex)
        for k, (gamma, deph) in enumerate(zip(self.decay, self.dephasing)):
            sm = self.lowering(k)
            num = self.number(k)
            target += gamma * num + 2.0 * deph * num
            target_jump += gamma * np.kron(sm, sm.conj()) + 2.0 * deph * np.kron(num, num)
        got_jump = sum(
            (np.kron(c.operator, c.operator.conj()) for c in self.channels),
            np.zeros_like(target_jump),
        )
        if not np.allclose(self.decay_sum(), target, atol=atol, rtol=0):
            raise ChannelIncompleteness("sum of L^dag L differs from the atom-local decay")
        if not np.allclose(got_jump, target_jump, atol=atol, rtol=0):
            raise ChannelIncompleteness("jump terms couple the atoms in the unconditional dynamics")


def _embed(op: np.ndarray, k: int, n: int) -> np.ndarray:
    out = np.eye(1, dtype=complex)
    for j in range(n):
        out = np.kron(out, op if j == k else IDENTITY)
    return out


def jump_channels(
    state,
    params1: DriveParams,
    params2: DriveParams,
    model: DetectionModel | None = None,
    include_spectators: bool = False,
) -> JumpChannelSet:
    """Build the detector, conjugate-port and loss channels for one branch.

    Rates are per ``params1.t1``.  The detector channel is
    ``sum_s c_s sqrt(eta_s gamma_s) sigma_s``; the conjugate port flips the
    sign of qubit 2's amplitude so the two ports together are atom-local;
    whatever emission is left over goes to a per-atom loss channel.
    ``include_spectators`` keeps undriven qubits as idle two-level factors
    (used to check the invariants on the full four-dimensional space).
    """
    state = JointSpinState.parse(state)
    model = DetectionModel() if model is None else model
    zeta = state_participation(state)
    unit = params1.t1
    params = (params1, params2)
    atoms = tuple(s for s in (0, 1) if zeta[s] or include_spectators)
    n = len(atoms)
    dim = 2**n
    ham = np.zeros((dim, dim), dtype=complex)
    det = np.zeros((dim, dim), dtype=complex)
    conj = np.zeros((dim, dim), dtype=complex)
    losses = []
    decay = []
    dephasing = []
    for k, s in enumerate(atoms):
        p = params[s]
        gamma, omega, deph = p.rates(unit)
        active = bool(zeta[s])
        sm = _embed(SIGMA_MINUS, k, n)
        if active:
            ham += 0.5 * omega * (sm + sm.conj().T)
            weight = p.efficiency * gamma
            det += model.amp[s] * np.sqrt(weight) * sm
            conj += model.conjugate_amp[s] * np.sqrt(weight) * sm
            lost = gamma - (abs(model.amp[s]) ** 2 + abs(model.conjugate_amp[s]) ** 2) * weight
            if lost < -1e-12:
                raise ChannelIncompleteness(f"qubit {s + 1}: detector ports exceed the decay rate")
            lost = max(lost, 0.0)
        else:
            # idle spectator: decays into loss only, never driven
            lost = gamma
        decay.append(gamma)
        dephasing.append(deph if active else 0.0)
        losses.append(Channel(f"loss{s + 1}", np.sqrt(lost) * sm, LOSS))
        if active and deph > 0:
            losses.append(Channel(f"dephasing{s + 1}", np.sqrt(2.0 * deph) * _embed(NUMBER, k, n), OTHER))
    channels = []
    if n:
        channels = [Channel("d", det, DETECTOR), Channel("b", conj, CONJUGATE)] + losses
    return JumpChannelSet(atoms, ham, tuple(channels), tuple(decay), tuple(dephasing))
