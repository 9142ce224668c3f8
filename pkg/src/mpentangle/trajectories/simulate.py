"""Quantum-jump Monte Carlo of the two-qubit fluorescence network.

Trajectory ``i`` of a run with seed ``s`` draws its random numbers from
``PCG64(SeedSequence(s, spawn_key=(i,)))``, so a trajectory's record does not
depend on the ensemble size, the chunking or the number of worker threads.
"""
from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from ..counting import CountingStats
from ..dynamics import DriveParams
from ..errors import InvalidParameters, NormUnderflow
from ..network import DetectionModel, JointSpinState
from . import _fallback
from .channels import CATEGORY_NAMES, jump_channels

try:
    from . import _kernel
except ImportError:  # pragma: no cover - exercised when the extension is absent
    _kernel = None

MAX_STEP = 0.05
MAX_NORM_LOSS = 0.1


def compiled_available() -> bool:
    return _kernel is not None


def default_backend() -> str:
    if os.environ.get("MPENTANGLE_PURE_PYTHON"):
        return "python"
    return "compiled" if compiled_available() else "python"


def trajectory_seed(seed: int, index: int, stream: int = 0) -> np.random.SeedSequence:
    key = (index,) if stream == 0 else (index, stream)
    return np.random.SeedSequence(int(seed), spawn_key=key)


def choose_step(channels, step: float | None = None) -> float:
    """Largest step with < 10% norm loss and a well-conditioned Taylor series."""
    gmax = float(np.linalg.eigvalsh(channels.decay_sum()).max()) if channels.dim > 1 else 0.0
    hnorm = float(np.linalg.norm(channels.effective_hamiltonian(), 2)) if channels.dim > 1 else 0.0
    limit = -np.log1p(-MAX_NORM_LOSS) / gmax if gmax > 0 else np.inf
    if step is None:
        step = min(MAX_STEP, 0.95 * limit, 0.5 / hnorm if hnorm > 0 else np.inf)
    elif step > limit:
        raise NormUnderflow(f"step {step} loses more than {MAX_NORM_LOSS:.0%} of the norm per step")
    return float(step)


@dataclass
class TrajectoryEnsemble:
    """Per-trajectory jump counts for one joint spin branch."""

    seed: int
    n_traj: int
    duration: float
    state: JointSpinState
    d_count: np.ndarray
    b_count: np.ndarray
    loss_count: np.ndarray
    other_count: np.ndarray
    populations: np.ndarray  # (n_traj, 2) final excited populations per qubit
    backend: str = "compiled"
    step: float = MAX_STEP
    params: tuple = field(default=(), repr=False)

    @property
    def records(self) -> dict[str, np.ndarray]:
        return {
            "d_count": self.d_count,
            "b_count": self.b_count,
            "loss_count": self.loss_count,
            "other_count": self.other_count,
        }

    def counting_stats(self) -> CountingStats:
        d = self.d_count.astype(float)
        var = float(d.var(ddof=1)) if d.size > 1 else 0.0
        return CountingStats(mean=float(d.mean()), variance=var, t=self.duration, state=self.state, samples=self.d_count)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["index", "d_count", "b_count", "loss_count"])
        for i, row in enumerate(zip(self.d_count, self.b_count, self.loss_count)):
            writer.writerow([i, *map(int, row)])
        text = buf.getvalue()
        if path is not None:
            from ..io import atomic_write

            atomic_write(path, text)
        return text

    def summary(self) -> dict:
        stats = self.counting_stats()
        return {
            "state": self.state.name,
            "seed": int(self.seed),
            "n_traj": int(self.n_traj),
            "t_over_t1": self.duration,
            "backend": self.backend,
            "mean": stats.mean,
            "variance": stats.variance,
            "q": stats.q,
            "mean_b_count": float(self.b_count.mean()),
            "mean_loss_count": float(self.loss_count.mean()),
            "mean_population": self.populations.mean(axis=0).tolist(),
        }


def _run_chunk(backend, seed, indices, ham, prop, gsum, jumps, category, psi0, h, duration):
    bitgens = [np.random.PCG64(trajectory_seed(seed, int(i))) for i in indices]
    if backend == "compiled":
        n = len(bitgens)
        counts = np.zeros((n, 4), dtype=np.int64)
        psi = np.zeros((n, psi0.size), dtype=complex)
        _kernel.run_batch([bg.capsule for bg in bitgens], ham, prop, gsum, jumps, category, psi0, h, duration, counts, psi)
        return counts, psi
    gens = [np.random.Generator(bg) for bg in bitgens]
    counts, psi, _ = _fallback.run_batch(gens, ham, prop, gsum, jumps, category, psi0, h, duration)
    return counts, psi


def simulate(
    state,
    params1: DriveParams,
    params2: DriveParams,
    t: float,
    n_traj: int,
    seed: int,
    model: DetectionModel | None = None,
    backend: str | None = None,
    chunk_size: int = 2048,
    n_jobs: int = 1,
    step: float | None = None,
) -> TrajectoryEnsemble:
    """Simulate ``n_traj`` jump trajectories of duration ``t`` (units of ``params1.t1``).

    Both qubits start in the ground state of their optical transition.
    ``backend`` selects the compiled kernel or the numpy fallback; ``n_jobs``
    runs chunks on a thread pool without changing any record.
    """
    state = JointSpinState.parse(state)
    if n_traj < 1:
        raise InvalidParameters("n_traj must be at least 1")
    if not t > 0:
        raise InvalidParameters("duration must be positive")
    backend = default_backend() if backend is None else backend
    if backend not in ("compiled", "python"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "compiled" and not compiled_available():
        raise RuntimeError("compiled trajectory kernel is not available")

    channels = jump_channels(state, params1, params2, model)
    channels.check_complete()
    n = int(n_traj)
    counts = np.zeros((n, 4), dtype=np.int64)
    populations = np.zeros((n, 2))
    h = MAX_STEP
    if channels.dim > 1:
        h = choose_step(channels, step)
        heff = channels.effective_hamiltonian()
        ham = np.ascontiguousarray(heff)
        prop = np.ascontiguousarray(expm(-1j * heff * h))
        gsum = np.ascontiguousarray(channels.decay_sum())
        jumps = np.ascontiguousarray(np.stack([c.operator for c in channels.channels]))
        category = np.array([c.category for c in channels.channels], dtype=np.int64)
        psi0 = np.zeros(channels.dim, dtype=complex)
        psi0[0] = 1.0
        starts = list(range(0, n, chunk_size))
        job = lambda a: _run_chunk(  # noqa: E731
            backend, seed, range(a, min(a + chunk_size, n)), ham, prop, gsum, jumps, category, psi0, h, float(t)
        )
        if n_jobs > 1:
            with ThreadPoolExecutor(max_workers=n_jobs) as pool:
                results = list(pool.map(job, starts))
        else:
            results = [job(a) for a in starts]
        for a, (c, psi) in zip(starts, results):
            counts[a : a + len(c)] = c
            probs = psi.real**2 + psi.imag**2
            for k, s in enumerate(channels.atoms):
                bit = len(channels.atoms) - 1 - k
                mask = ((np.arange(channels.dim) >> bit) & 1).astype(bool)
                populations[a : a + len(c), s] = probs[:, mask].sum(axis=1)

    background = sum(p.background_rate * params1.t1 / p.t1 for p in (params1, params2)) * float(t)
    if background > 0:
        counts[:, 0] += np.array(
            [np.random.Generator(np.random.PCG64(trajectory_seed(seed, i, 1))).poisson(background) for i in range(n)],
            dtype=np.int64,
        )
    return TrajectoryEnsemble(
        seed=int(seed),
        n_traj=n,
        duration=float(t),
        state=state,
        d_count=counts[:, 0],
        b_count=counts[:, 1],
        loss_count=counts[:, 2],
        other_count=counts[:, 3],
        populations=populations,
        backend=backend,
        step=h,
        params=(params1, params2),
    )


def thin(ensemble: TrajectoryEnsemble, eta: float, seed: int) -> TrajectoryEnsemble:
    """Keep each detector count independently with probability ``eta``."""
    if not 0 <= eta <= 1:
        raise InvalidParameters("eta must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    kept = rng.binomial(ensemble.d_count, eta)
    return TrajectoryEnsemble(
        seed=ensemble.seed,
        n_traj=ensemble.n_traj,
        duration=ensemble.duration,
        state=ensemble.state,
        d_count=kept.astype(np.int64),
        b_count=ensemble.b_count,
        loss_count=ensemble.loss_count + (ensemble.d_count - kept),
        other_count=ensemble.other_count,
        populations=ensemble.populations,
        backend=ensemble.backend,
        step=ensemble.step,
        params=ensemble.params,
    )


__all__ = ["CATEGORY_NAMES", "TrajectoryEnsemble", "simulate", "thin", "trajectory_seed", "compiled_available"]
