"""Mode-amplitude model of the two-qubit interferometer.

Each optical mode carries a complex amplitude vector over three sources: the
input laser and the fluorescence fields ``F1`` and ``F2`` emitted by the two
qubits (``F_s`` proportional to ``sigma_{s,-}``).  Elements are applied in
order; splitters consume two modes and create two new ones, phase shifters
act in place, and an emitter adds its fluorescence to the mode passing the
qubit while recording the local laser amplitude that drives it.

The default layout folds both mirror-ended arms back through the splitters
that fed them:

    laser -> BS-1 -> (m, c);  m -> BS-2 -> (a1, a2)
    a1: pi/2 shifter -> qubit 1 -> pi/2 shifter;  a2: qubit 2
    (a1, a2) -> BS-2 -> (b1, b2);  c: pi/2 shifter, twice
    (b1, c) -> BS-1 -> (d, e)

The laser leaves entirely through ``e``, so ``d`` carries fluorescence only,
with equal weight 1/2 from each qubit.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Any, Iterable

import numpy as np

from .errors import LaserLeakage, NetworkTopologyError, NonUnitarySplitter

LASER, F1, F2 = 0, 1, 2
N_SOURCES = 3

LEAKAGE_TOL = 1e-10
UNITARY_TOL = 1e-12


def beam_splitter(ratio: float = 0.5) -> np.ndarray:
    """Lossless splitter with a factor ``i`` on reflection."""
    t = np.sqrt(1.0 - ratio)
    r = np.sqrt(ratio)
    return np.array([[t, 1j * r], [1j * r, t]], dtype=complex)


@dataclass(frozen=True)
class Element:
    kind: str  # source | splitter | phase | emitter | detector
    name: str = ""
    inputs: tuple[str, ...] = ()
    outputs: tuple[str, ...] = ()
    mode: str = ""
    phase: float = 0.0
    passes: int = 1
    qubit: int = 0
    matrix: np.ndarray | None = field(default=None, compare=False)

    def transform(self) -> np.ndarray:
        return beam_splitter() if self.matrix is None else np.asarray(self.matrix, dtype=complex)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"type": self.kind}
        if self.kind == "splitter":
            out.update(name=self.name, inputs=list(self.inputs), outputs=list(self.outputs))
            if self.matrix is not None:
                m = np.asarray(self.matrix, dtype=complex)
                out["matrix_re"] = m.real.tolist()
                out["matrix_im"] = m.imag.tolist()
        elif self.kind == "phase":
            out.update(mode=self.mode, phase=self.phase, passes=self.passes)
        elif self.kind == "emitter":
            out.update(mode=self.mode, qubit=self.qubit)
        else:
            out.update(mode=self.mode)
        return out


@dataclass(frozen=True)
class ModeNetwork:
    """Ordered optical elements with their wiring through named modes."""

    elements: tuple[Element, ...]

    @property
    def splitters(self) -> list[Element]:
        return [e for e in self.elements if e.kind == "splitter"]

    @property
    def phase_shifters(self) -> list[Element]:
        return [e for e in self.elements if e.kind == "phase"]

    @property
    def wiring(self) -> list[tuple[str, str]]:
        """Directed (input mode, output mode) pairs through every splitter."""
        edges = []
        for e in self.splitters:
            edges.extend((i, o) for i in e.inputs for o in e.outputs)
        return edges

    def without(self, kind: str, mode: str) -> "ModeNetwork":
        """Copy with every ``kind`` element acting on ``mode`` removed."""
        return ModeNetwork(tuple(e for e in self.elements if not (e.kind == kind and e.mode == mode)))

    def swap_qubits(self) -> "ModeNetwork":
        swapped = []
        for e in self.elements:
            if e.kind == "emitter":
                e = replace(e, qubit=3 - e.qubit)
            swapped.append(e)
        return ModeNetwork(tuple(swapped))

    @classmethod
    def from_dicts(cls, items: Iterable[dict]) -> "ModeNetwork":
        elements = []
        for k, item in enumerate(items):
            item = dict(item)
            kind = item.pop("type", None)
            where = f"network.elements[{k}]"
            try:
                if kind == "source":
                    elements.append(Element("source", mode=item["mode"]))
                elif kind == "splitter":
                    matrix = None
                    if "matrix_re" in item:
                        matrix = np.asarray(item["matrix_re"], float) + 1j * np.asarray(
                            item.get("matrix_im", np.zeros((2, 2))), float
                        )
                    elements.append(
                        Element(
                            "splitter",
                            name=item.get("name", f"BS{k}"),
                            inputs=tuple(item["inputs"]),
                            outputs=tuple(item["outputs"]),
                            matrix=matrix,
                        )
                    )
                elif kind == "phase":
                    elements.append(
                        Element("phase", mode=item["mode"], phase=float(item["phase"]),
                                passes=int(item.get("passes", 1)))
                    )
                elif kind == "emitter":
                    elements.append(Element("emitter", mode=item["mode"], qubit=int(item["qubit"])))
                elif kind == "detector":
                    elements.append(Element("detector", mode=item["mode"]))
                else:
                    raise NetworkTopologyError(f"{where}: unknown element type {kind!r}")
            except KeyError as exc:
                raise NetworkTopologyError(f"{where}: missing key {exc.args[0]!r}") from None
        return cls(tuple(elements))

    def to_dicts(self) -> list[dict[str, Any]]:
        return [e.to_dict() for e in self.elements]


def default_network() -> ModeNetwork:
    """The interferometer with pi/2 shifters in the a1 and c arms."""
    q = np.pi / 2
    return ModeNetwork(
        (
            Element("source", mode="laser"),
            Element("splitter", name="BS-1", inputs=("laser", "vac1"), outputs=("m", "c")),
            Element("phase", mode="c", phase=q, passes=2),
            Element("splitter", name="BS-2", inputs=("m", "vac2"), outputs=("a1", "a2")),
            Element("phase", mode="a1", phase=q),
            Element("emitter", mode="a1", qubit=1),
            Element("phase", mode="a1", phase=q),
            Element("emitter", mode="a2", qubit=2),
            Element("splitter", name="BS-2", inputs=("a1", "a2"), outputs=("b1", "b2")),
            Element("splitter", name="BS-1", inputs=("b1", "c"), outputs=("d", "e")),
            Element("detector", mode="d"),
        )
    )


@dataclass(frozen=True)
class Propagation:
    """Amplitudes of every terminal mode plus emitter drive amplitudes."""

    terminal: dict[str, np.ndarray]
    history: dict[str, np.ndarray]
    drive: dict[int, complex]
    detector: str


def check_unitary(matrix: np.ndarray, name: str = "splitter") -> None:
    m = np.asarray(matrix, dtype=complex)
    if m.shape != (2, 2) or not np.allclose(m.conj().T @ m, np.eye(2), atol=UNITARY_TOL, rtol=0):
        raise NonUnitarySplitter(f"{name}: transform is not unitary")


def propagate(network: ModeNetwork, laser_amplitude: complex = 1.0) -> Propagation:
    """Push a coherent laser amplitude and both fluorescence sources through."""
    live: dict[str, np.ndarray] = {}
    consumed: set[str] = set()
    history: dict[str, np.ndarray] = {}
    drive: dict[int, complex] = {}
    detectors: list[str] = []
    sources = 0

    def take(mode: str, allow_vacuum: bool) -> np.ndarray:
        if mode in live:
            consumed.add(mode)
            return live.pop(mode)
        if mode in consumed:
            raise NetworkTopologyError(f"mode {mode!r} is used twice")
        if not allow_vacuum:
            raise NetworkTopologyError(f"mode {mode!r} is not defined")
        consumed.add(mode)
        return np.zeros(N_SOURCES, dtype=complex)

    def put(mode: str, amp: np.ndarray) -> None:
        if mode in live:
            raise NetworkTopologyError(f"mode {mode!r} is produced twice")
        consumed.discard(mode)
        live[mode] = amp
        history[mode] = amp.copy()

    for e in network.elements:
        if e.kind == "source":
            sources += 1
            amp = np.zeros(N_SOURCES, dtype=complex)
            amp[LASER] = laser_amplitude
            put(e.mode, amp)
        elif e.kind == "splitter":
            if len(e.inputs) != 2 or len(e.outputs) != 2:
                raise NetworkTopologyError(f"{e.name}: splitters take two inputs and two outputs")
            u = e.transform()
            check_unitary(u, e.name)
            a = np.stack([take(m, allow_vacuum=True) for m in e.inputs])
            b = u @ a
            for mode, amp in zip(e.outputs, b):
                put(mode, amp)
        elif e.kind == "phase":
            live[e.mode] = take(e.mode, allow_vacuum=False) * np.exp(1j * e.phase * e.passes)
            consumed.discard(e.mode)
            history[e.mode] = live[e.mode].copy()
        elif e.kind == "emitter":
            if e.qubit not in (1, 2):
                raise NetworkTopologyError(f"emitter qubit must be 1 or 2, got {e.qubit}")
            if e.qubit in drive:
                raise NetworkTopologyError(f"qubit {e.qubit} appears twice")
            amp = take(e.mode, allow_vacuum=False)
            drive[e.qubit] = complex(amp[LASER])
            amp = amp.copy()
            amp[F1 if e.qubit == 1 else F2] += 1.0
            live[e.mode] = amp
            consumed.discard(e.mode)
            history[e.mode] = amp.copy()
        elif e.kind == "detector":
            detectors.append(e.mode)
        else:
            raise NetworkTopologyError(f"unknown element {e.kind!r}")

    if sources != 1:
        raise NetworkTopologyError(f"expected exactly one laser source, found {sources}")
    if sorted(drive) != [1, 2]:
        raise NetworkTopologyError("both qubits 1 and 2 must sit on a mode")
    if len(detectors) != 1:
        raise NetworkTopologyError("expected exactly one detector")
    if detectors[0] not in live:
        raise NetworkTopologyError(f"detector mode {detectors[0]!r} is not a terminal mode")
    return Propagation(terminal=dict(live), history=history, drive=drive, detector=detectors[0])


@dataclass(frozen=True)
class DetectionModel:
    """Field operator at the detector, ``D = amp[0] s1- + amp[1] s2-``.

    Amplitudes are referred to each qubit's own drive phase and normalised
    so that ``amp[0]`` is real and non-negative.  The photon flux at the
    detector is ``rate_prefactor(params) * <D^dag D>``.
    """

    amp: tuple[complex, complex] = (0.5 + 0j, 0.5 + 0j)
    laser_amp_at_d: complex = 0j

    def rate_prefactor(self, params) -> float:
        return params.efficiency / params.t1

    @property
    def conjugate_amp(self) -> tuple[complex, complex]:
        """Amplitudes of the complementary port that completes the dissipator."""
        return (self.amp[0], -self.amp[1])

    def swapped(self) -> "DetectionModel":
        return DetectionModel(amp=(self.amp[1], self.amp[0]), laser_amp_at_d=self.laser_amp_at_d)


def build_network(config: ModeNetwork | None = None) -> DetectionModel:
    """Derive the detector field operator and verify laser cancellation."""
    config = default_network() if config is None else config
    prop = propagate(config)
    d = prop.terminal[prop.detector]
    leak = complex(d[LASER])
    if abs(leak) > LEAKAGE_TOL:
        raise LaserLeakage(f"laser amplitude {abs(leak):.3g} reaches detector {prop.detector!r}")
    amps = []
    for qubit, src in ((1, F1), (2, F2)):
        phase = prop.drive[qubit]
        phase = phase / abs(phase) if abs(phase) > 0 else 1.0
        amps.append(d[src] * phase)
    ref = amps[0] if abs(amps[0]) > 0 else amps[1]
    glob = np.conj(ref) / abs(ref) if abs(ref) > 0 else 1.0
    c1, c2 = (complex(_clean(a * glob)) for a in amps)
    return DetectionModel(amp=(c1, c2), laser_amp_at_d=0j)


def _clean(z: complex, tol: float = 1e-14) -> complex:
    re = 0.0 if abs(z.real) < tol else z.real
    im = 0.0 if abs(z.imag) < tol else z.imag
    return complex(re, im)


def intensities(network: ModeNetwork) -> dict[str, np.ndarray]:
    """Per-source intensity reaching each terminal mode."""
    prop = propagate(network)
    return {mode: np.abs(amp) ** 2 for mode, amp in prop.terminal.items()}


class JointSpinState(enum.Enum):
    """Joint spin branch of the two qubits; ``M`` marks the fluorescing |->."""

    PP = "++"
    PM = "+-"
    MP = "-+"
    MM = "--"

    @classmethod
    def parse(cls, value) -> "JointSpinState":
        if isinstance(value, cls):
            return value
        text = str(value).strip()
        aliases = {"E": cls.PM}
        if text.upper() in aliases:
            return aliases[text.upper()]
        for member in cls:
            if text.upper() == member.name or text == member.value:
                return member
        raise ValueError(f"unknown joint spin state {value!r}")


def state_participation(state: JointSpinState) -> tuple[int, int]:
    """Which qubits fluoresce: qubit s takes part iff it is in |->."""
    state = JointSpinState.parse(state)
    return tuple(int(c == "-") for c in state.value)  # type: ignore[return-value]
