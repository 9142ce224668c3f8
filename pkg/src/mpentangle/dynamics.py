"""Resonant optical Bloch equations and regression-theorem correlators.

Times are measured in units of the transition's relaxation time T1 and the
drive is specified by the dimensionless product ``x = Omega * T1``.  The
single-atom density matrix is written in the basis (|g>, |e>), where |g> is
the optically active spin state and |e> the trion; ``sigma_-`` is |g><e|.

Every two-time correlator is obtained from one linear map: the 4x4
Liouvillian acting on the row-major vectorised density matrix.  Operator
insertions at the earlier time are applied to the state, the result is
propagated over the lag with ``expm(L * lag)``, and the later-time operator is
read off with a trace.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from .errors import InvalidParameters, InvalidTimeGrid

SIGMA_MINUS = np.array([[0, 1], [0, 0]], dtype=complex)
SIGMA_PLUS = SIGMA_MINUS.conj().T
NUMBER = SIGMA_PLUS @ SIGMA_MINUS
IDENTITY = np.eye(2, dtype=complex)


@dataclass(frozen=True)
class DriveParams:
    """One resonantly driven transition.

    Parameters
    ----------
    rabi : float
        Dimensionless drive strength ``x = Omega * T1``.
    t1 : float
        Relaxation time of the transition, in any consistent time unit.
    efficiency : float
        Combined collection and detection efficiency ``eta``.
    background_rate : float
        Extraneous detector counts per T1 attributed to this qubit.
    dephasing : float
        Extra pure-dephasing rate of the optical coherence, per T1.
    """

    rabi: float
    t1: float = 1.0
    efficiency: float = 1.0
    background_rate: float = 0.0
    dephasing: float = 0.0

    def __post_init__(self):
        for name in ("rabi", "t1", "efficiency", "background_rate", "dephasing"):
            value = getattr(self, name)
            if not np.isfinite(value):
                raise InvalidParameters(f"{name} must be finite, got {value!r}")
        if self.t1 <= 0:
            raise InvalidParameters(f"t1 must be positive, got {self.t1}")
        if self.rabi < 0:
            raise InvalidParameters(f"rabi must be non-negative, got {self.rabi}")
        if not 0.0 <= self.efficiency <= 1.0:
            raise InvalidParameters(f"efficiency must lie in [0, 1], got {self.efficiency}")
        if self.background_rate < 0:
            raise InvalidParameters("background_rate must be non-negative")
        if self.dephasing < 0:
            raise InvalidParameters("dephasing must be non-negative")

    def rates(self, time_unit: float | None = None) -> tuple[float, float, float]:
        """Return ``(decay, rabi, dephasing)`` angular rates per ``time_unit``."""
        unit = self.t1 if time_unit is None else time_unit
        gamma = unit / self.t1
        return gamma, self.rabi * gamma, self.dephasing * gamma


@dataclass(frozen=True)
class BlochState:
    """Excited population and optical coherence ``<sigma_->`` of one transition."""

    p_e: float
    coh: complex = 0j

    def to_matrix(self) -> np.ndarray:
        # <sigma_-> = rho_eg
        return np.array(
            [[1.0 - self.p_e, np.conj(self.coh)], [self.coh, self.p_e]], dtype=complex
        )

    @classmethod
    def from_matrix(cls, rho: np.ndarray) -> "BlochState":
        return cls(p_e=float(rho[1, 1].real), coh=complex(rho[1, 0]))

    def is_physical(self, tol: float = 1e-12) -> bool:
        p = self.p_e
        return -tol <= p <= 1 + tol and abs(self.coh) ** 2 <= p * (1 - p) + tol


GROUND = BlochState(0.0, 0j)


def lindblad_superoperator(hamiltonian: np.ndarray, collapse: Sequence[np.ndarray]) -> np.ndarray:
    """Matrix of the Lindblad generator on row-major vectorised operators.

    Uses ``vec(A X B) = kron(A, B.T) vec(X)``.
    """
    dim = hamiltonian.shape[0]
    eye = np.eye(dim, dtype=complex)
    gen = -1j * (np.kron(hamiltonian, eye) - np.kron(eye, hamiltonian.T))
    for c in collapse:
        cdc = c.conj().T @ c
        gen += np.kron(c, c.conj()) - 0.5 * np.kron(cdc, eye) - 0.5 * np.kron(eye, cdc.T)
    return gen


def atom_generators(params: DriveParams, time_unit: float | None = None):
    """Hamiltonian and collapse operators for one atom in its own drive frame."""
    gamma, omega, dephasing = params.rates(time_unit)
    ham = 0.5 * omega * (SIGMA_PLUS + SIGMA_MINUS)
    collapse = [np.sqrt(gamma) * SIGMA_MINUS]
    if dephasing > 0:
        collapse.append(np.sqrt(2.0 * dephasing) * NUMBER)
    return ham, collapse


@lru_cache(maxsize=256)
def liouvillian(params: DriveParams, time_unit: float | None = None) -> np.ndarray:
    gen = lindblad_superoperator(*atom_generators(params, time_unit))
    gen.setflags(write=False)
    return gen


@lru_cache(maxsize=4096)
def propagator(params: DriveParams, lag: float, time_unit: float | None = None) -> np.ndarray:
    """Exact Bloch map ``expm(L * lag)`` on vectorised density matrices."""
    prop = expm(liouvillian(params, time_unit) * lag)
    prop.setflags(write=False)
    return prop


def _check_grid(t_grid) -> np.ndarray:
    grid = np.asarray(t_grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise InvalidTimeGrid("time grid must be a non-empty 1-d sequence")
    if grid[0] != 0.0:
        raise InvalidTimeGrid("time grid must start at 0")
    if np.any(np.diff(grid) <= 0):
        raise InvalidTimeGrid("time grid must be strictly ascending")
    return grid


def _bloch_rhs(t, y, gamma, omega, dephasing):
    # y = (p, Re s, Im s) with s = <sigma_->
    p, sr, si = y
    g2 = 0.5 * gamma + dephasing
    return [
        -omega * si - gamma * p,
        -g2 * sr,
        -g2 * si + 0.5 * omega * (2.0 * p - 1.0),
    ]


def evolve_bloch(
    params: DriveParams,
    initial: BlochState | None = None,
    t_grid=(0.0,),
    method: str = "expm",
) -> list[BlochState]:
    """Solve the resonant optical Bloch equations on ``t_grid`` (units of T1).

    ``method="expm"`` applies the exact propagator between grid points;
    ``method="ode"`` integrates the three real Bloch equations with an
    adaptive Runge-Kutta scheme and is kept as an independent cross-check.
    """
    if not isinstance(params, DriveParams):
        raise InvalidParameters("params must be a DriveParams instance")
    grid = _check_grid(t_grid)
    initial = GROUND if initial is None else initial

    if method == "expm":
        vec = initial.to_matrix().reshape(-1)
        out = [initial]
        for dt in np.diff(grid):
            vec = propagator(params, float(dt)) @ vec
            out.append(BlochState.from_matrix(vec.reshape(2, 2)))
        return out
    if method == "ode":
        gamma, omega, dephasing = params.rates()
        y0 = [initial.p_e, initial.coh.real, initial.coh.imag]
        if grid.size == 1:
            return [initial]
        sol = solve_ivp(
            _bloch_rhs,
            (0.0, grid[-1]),
            y0,
            method="DOP853",
            t_eval=grid,
            args=(gamma, omega, dephasing),
            rtol=1e-11,
            atol=1e-13,
        )
        return [BlochState(float(p), complex(sr, si)) for p, sr, si in sol.y.T]
    raise ValueError(f"unknown method {method!r}")


def steady_state(params: DriveParams) -> BlochState:
    """Stationary state of the driven, damped transition.

    Without dephasing this is ``p_e = x^2 / (1 + 2 x^2)`` and
    ``<sigma_-> = -i x / (1 + 2 x^2)``.
    """
    gamma, omega, dephasing = params.rates()
    g2 = 0.5 * gamma + dephasing
    p = omega**2 / (2.0 * g2 * gamma + 2.0 * omega**2)
    coh = 1j * omega * (2.0 * p - 1.0) / (2.0 * g2)
    return BlochState(p, complex(coh))


def _state_at(params: DriveParams, t: float, initial) -> np.ndarray:
    if isinstance(initial, str):
        if initial == "steady":
            return steady_state(params).to_matrix()
        if initial == "ground":
            initial = GROUND
        else:
            raise ValueError(f"unknown initial state {initial!r}")
    initial = GROUND if initial is None else initial
    vec = propagator(params, float(t)) @ initial.to_matrix().reshape(-1)
    return vec.reshape(2, 2)


def _check_times(t1: float, t2: float):
    if t1 < 0:
        raise InvalidTimeGrid(f"t1 must be non-negative, got {t1}")
    if t2 < t1:
        raise InvalidTimeGrid(f"correlator requires t1 <= t2, got t1={t1}, t2={t2}")


def two_time(
    params: DriveParams,
    t1: float,
    t2: float,
    left: np.ndarray | None = None,
    middle: np.ndarray | None = None,
    right: np.ndarray | None = None,
    initial=None,
) -> complex:
    """Regression-theorem value of ``<left(t1) middle(t2) right(t1)>``.

    Evaluates ``Tr[middle expm(L (t2 - t1)) (right rho(t1) left)]``; any
    operator given as ``None`` is the identity.  ``initial`` is the state at
    ``t = 0`` (ground by default) or the string ``"steady"`` to start from the
    stationary state.
    """
    _check_times(t1, t2)
    rho = _state_at(params, t1, initial)
    if right is not None:
        rho = right @ rho
    if left is not None:
        rho = rho @ left
    vec = propagator(params, float(t2 - t1)) @ rho.reshape(-1)
    out = vec.reshape(2, 2)
    if middle is not None:
        out = middle @ out
    return complex(np.trace(out))


def correlator_ee(params: DriveParams, t1: float, t2: float, initial=None) -> complex:
    """First-order dipole correlator ``<sigma_+(t1) sigma_-(t2)>``."""
    return two_time(params, t1, t2, left=SIGMA_PLUS, middle=SIGMA_MINUS, initial=initial)


def correlator_g2(params: DriveParams, t1: float, t2: float, initial=None) -> float:
    """Unnormalised intensity correlator ``<s+(t1) s+(t2) s-(t2) s-(t1)>``.

    The insertion ``sigma_- rho sigma_+`` collapses the state to the ground
    state weighted by ``p_e(t1)``.
    """
    val = two_time(
        params, t1, t2, left=SIGMA_PLUS, middle=NUMBER, right=SIGMA_MINUS, initial=initial
    )
    return val.real


class MixedCorrelators(NamedTuple):
    coherence: complex  # <s-(t1)>
    first_order: complex  # <s+(t1) s-(t2)>
    late_pop_early_minus: complex  # <s+(t2) s-(t2) s-(t1)>
    early_plus_late_pop: complex  # <s+(t1) s+(t2) s-(t2)>


def mixed_correlators(params: DriveParams, t1: float, t2: float, initial=None) -> MixedCorrelators:
    """Single-atom factors entering the cross-atom terms of the counting variance."""
    _check_times(t1, t2)
    coherence = two_time(params, t1, t1, middle=SIGMA_MINUS, initial=initial)
    return MixedCorrelators(
        coherence=coherence,
        first_order=correlator_ee(params, t1, t2, initial),
        late_pop_early_minus=two_time(params, t1, t2, middle=NUMBER, right=SIGMA_MINUS, initial=initial),
        early_plus_late_pop=two_time(params, t1, t2, left=SIGMA_PLUS, middle=NUMBER, initial=initial),
    )


@dataclass(frozen=True)
class CorrelationKernel:
    """A two-time correlator sampled on the lower triangle ``t1 <= t2``.

    ``values[j, i]`` holds ``K(t_i, t_j)`` for ``i <= j``; entries above the
    diagonal are NaN.
    """

    dt: float
    t_max: float
    values: np.ndarray

    @property
    def grid(self) -> np.ndarray:
        return np.arange(self.values.shape[0]) * self.dt

    def __call__(self, i: int, j: int) -> complex:
        if i > j:
            raise IndexError("kernel is stored for t1 <= t2 only")
        return self.values[j, i]


def correlation_kernel(
    params: DriveParams,
    t_max: float,
    dt: float,
    left=None,
    middle=None,
    right=None,
    initial=None,
) -> CorrelationKernel:
    """Sample ``<left(t1) middle(t2) right(t1)>`` on a uniform lower triangle."""
    if dt <= 0:
        raise InvalidTimeGrid("dt must be positive")
    n = int(round(t_max / dt)) + 1
    if abs((n - 1) * dt - t_max) > 1e-9 * max(1.0, t_max):
        raise InvalidTimeGrid("t_max must be an integer multiple of dt")
    step = propagator(params, float(dt))
    rho0 = (GROUND if initial is None else initial).to_matrix()
    eye = IDENTITY
    left = eye if left is None else left
    middle = eye if middle is None else middle
    right = eye if right is None else right
    readout = middle.T.reshape(-1)  # Tr(M X) = vec(M^T) . vec(X)

    values = np.full((n, n), np.nan, dtype=complex)
    rho = rho0.reshape(-1)
    # insertions X_i = right rho_i left, each propagated forward along its column
    inserted = np.empty((n, 4), dtype=complex)
    for i in range(n):
        inserted[i] = (right @ rho.reshape(2, 2) @ left).reshape(-1)
        rho = step @ rho
    carry = inserted.copy()
    for lag in range(n):
        idx = np.arange(n - lag)
        values[idx + lag, idx] = carry[: n - lag] @ readout
        carry = carry @ step.T
    return CorrelationKernel(dt=dt, t_max=(n - 1) * dt, values=values)
