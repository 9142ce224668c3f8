"""Reference computations that share no code with the package.

* ``mollow_pe`` is the analytic excited population of a resonantly driven
  two-level atom starting in the ground state.
* ``count_distribution`` evolves the photon-number-resolved master equation
  ``d rho_n/dt = (L - J) rho_n + J rho_{n-1}`` with ``J(rho) = D rho D^+``.
  It uses the basis (e, g) and column-stacking vectorisation, both the
  opposite of the package, and never touches the regression theorem.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

# basis (e, g): lowering operator |g><e|
_SM = np.array([[0.0, 0.0], [1.0, 0.0]], dtype=complex)
_I2 = np.eye(2, dtype=complex)


def mollow_pe(x: float, tau: float) -> float:
    """Excited population after ``tau`` (units of T1) from the ground state."""
    x2 = x * x
    ss = x2 / (1.0 + 2.0 * x2)
    mu2 = x2 - 1.0 / 16.0
    if mu2 > 0:
        mu = np.sqrt(mu2)
        osc = np.cos(mu * tau) + 0.75 / mu * np.sin(mu * tau)
    elif mu2 < 0:
        k = np.sqrt(-mu2)
        osc = np.cosh(k * tau) + 0.75 / k * np.sinh(k * tau)
    else:
        osc = 1.0 + 0.75 * tau
    return float(ss * (1.0 - np.exp(-0.75 * tau) * osc))


def _spre(a):  # vec(A X) with column stacking
    return np.kron(np.eye(a.shape[0]), a)


def _spost(b):  # vec(X B)
    return np.kron(b.T, np.eye(b.shape[0]))


def count_distribution(active, x, eta, t, amp=(0.5, 0.5), t1=(1.0, 1.0), nmax=60):
    """Probability of ``n`` detector counts after ``t`` for two atoms.

    ``active[s]`` says whether atom ``s`` is in the fluorescing spin state;
    ``x``, ``t1`` are per-atom drive and lifetime, times in units of
    ``t1[0]``.  Returns ``P(n)`` for ``n = 0 .. nmax``.
    """
    s1 = np.kron(_SM, _I2)
    s2 = np.kron(_I2, _SM)
    ops = (s1, s2)
    h = np.zeros((4, 4), dtype=complex)
    lind = np.zeros((16, 16), dtype=complex)
    det = np.zeros((4, 4), dtype=complex)
    for s in range(2):
        if not active[s]:
            continue
        gamma = t1[0] / t1[s]
        omega = x[s] * gamma
        op = ops[s]
        h += 0.5 * omega * (op + op.conj().T)
        n_op = op.conj().T @ op
        lind += gamma * (_spre(op) @ _spost(op.conj().T) - 0.5 * _spre(n_op) - 0.5 * _spost(n_op))
        det += amp[s] * np.sqrt(eta * gamma) * op
    lind += -1j * (_spre(h) - _spost(h))
    jump = _spre(det) @ _spost(det.conj().T)
    nj = sp.csr_matrix(lind - jump)
    jp = sp.csr_matrix(jump)
    blocks = [[None] * (nmax + 1) for _ in range(nmax + 1)]
    for n in range(nmax + 1):
        blocks[n][n] = nj if n < nmax else sp.csr_matrix(lind)  # last block absorbs the tail
        if n:
            blocks[n][n - 1] = jp
    gen = sp.bmat(blocks, format="csc")
    rho0 = np.zeros(16 * (nmax + 1), dtype=complex)
    ground = np.zeros((4, 4), dtype=complex)
    ground[3, 3] = 1.0  # |g g> is the last basis state
    rho0[:16] = ground.reshape(-1, order="F")
    out = expm_multiply(gen * t, rho0)
    probs = np.empty(nmax + 1)
    for n in range(nmax + 1):
        rho = out[16 * n : 16 * (n + 1)].reshape(4, 4, order="F")
        probs[n] = np.trace(rho).real
    return probs


def count_moments(active, x, eta, t, **kw):
    """Mean and variance of the counts from :func:`count_distribution`."""
    probs = count_distribution(active, x, eta, t, **kw)
    if probs[-1] > 1e-12:
        raise ValueError("truncation too small for this mean count")
    n = np.arange(probs.size)
    mean = float(n @ probs)
    return mean, float((n - mean) ** 2 @ probs)


def longtime_q_single(x: float, eta: float) -> float:
    """Long-time Mandel Q of one resonantly driven emitter seen at efficiency eta."""
    return -eta * 6.0 * x * x / (1.0 + 2.0 * x * x) ** 2
