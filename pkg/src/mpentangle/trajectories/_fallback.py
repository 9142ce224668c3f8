"""Vectorised numpy implementation of the quantum-jump kernel.

Trajectories advance in lock step, one propagator step per iteration, and
every trajectory consumes its own random stream in the same order as the
compiled kernel.  Matrix-vector products are written out as elementwise sums
so each row's arithmetic does not depend on how many rows share the batch.
"""
from __future__ import annotations

import numpy as np

TAYLOR_TOL = 1e-34
CROSS_TOL = 1e-12
NCAT = 4


class _Streams:
    """Buffered per-trajectory uniform draws."""

    def __init__(self, generators, block: int = 64):
        self.generators = generators
        self.block = block
        self.buf = np.stack([g.random(block) for g in generators]) if generators else np.empty((0, block))
        self.pos = np.zeros(len(generators), dtype=np.intp)

    def draw(self, rows: np.ndarray) -> np.ndarray:
        empty = rows[self.pos[rows] >= self.block]
        for i in empty:
            self.buf[i] = self.generators[i].random(self.block)
            self.pos[i] = 0
        out = self.buf[rows, self.pos[rows]]
        self.pos[rows] += 1
        return out


def _mv(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    out = np.zeros_like(v)
    for j in range(m.shape[1]):
        out += v[:, j : j + 1] * m[:, j][None, :]
    return out


def _norm2(v: np.ndarray) -> np.ndarray:
    return (v.real**2 + v.imag**2).sum(axis=-1)


def _expmv(ham: np.ndarray, v: np.ndarray, s: np.ndarray) -> np.ndarray:
    term = v.copy()
    out = v.copy()
    for k in range(1, 60):
        term = (-1j * s / k)[:, None] * _mv(ham, term)
        out = out + term
        if np.all(_norm2(term) <= TAYLOR_TOL * _norm2(out)):
            break
    return out


def _expect(m, v):
    return np.einsum("ni,ni->n", v.conj(), _mv(m, v)).real


def _hermite_root(f0, f1, d0, d1, s):
    lo = np.zeros_like(s)
    hi = np.ones_like(s)
    u = f0 / (f0 - f1)
    for _ in range(8):
        u2 = u * u
        u3 = u2 * u
        p = (2 * u3 - 3 * u2 + 1) * f0 + (u3 - 2 * u2 + u) * s * d0 + (-2 * u3 + 3 * u2) * f1 + (u3 - u2) * s * d1
        lo = np.where(p > 0, u, lo)
        hi = np.where(p > 0, hi, u)
        dp = (6 * u2 - 6 * u) * f0 + (3 * u2 - 4 * u + 1) * s * d0 + (-6 * u2 + 6 * u) * f1 + (3 * u2 - 2 * u) * s * d1
        with np.errstate(divide="ignore", invalid="ignore"):
            u = np.where(dp < 0, u - p / dp, 0.5 * (lo + hi))
        out = ~((u > lo) & (u < hi))
        u[out] = 0.5 * (lo[out] + hi[out])
    return u * s


def _crossing(ham, gsum, psi, cand, n0, n1, s, r):
    a = np.zeros_like(s)
    b = s.copy()
    x = _hermite_root(n0 - r, n1 - r, -_expect(gsum, psi), -_expect(gsum, cand), s)
    bad = ~((x > a) & (x <= b))
    x[bad] = 0.5 * (a[bad] + b[bad])
    phi = np.empty_like(psi)
    live = np.arange(len(s))
    for _ in range(200):
        if live.size == 0:
            break
        cur = _expmv(ham, psi[live], x[live])
        phi[live] = cur
        f = _norm2(cur) - r[live]
        done = np.abs(f) <= CROSS_TOL * r[live]
        pos = f > 0
        a[live[pos & ~done]] = x[live[pos & ~done]]
        b[live[~pos & ~done]] = x[live[~pos & ~done]]
        done |= (b[live] - a[live]) <= 1e-15 * s[live]
        deriv = -_expect(gsum, cur)
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = np.where(deriv < 0, x[live] - f / deriv, 0.5 * (a[live] + b[live]))
        out = ~((xn > a[live]) & (xn < b[live]))
        xn[out] = 0.5 * (a[live][out] + b[live][out])
        keep = ~done
        x[live[keep]] = xn[keep]
        live = live[keep]
    return x, phi


def run_batch(generators, ham, prop, gsum, jumps, category, psi0, h, duration):
    """Run one trajectory per generator; returns (counts, final states, jumps)."""
    n = len(generators)
    d = psi0.size
    streams = _Streams(generators)
    psi = np.tile(psi0.astype(complex), (n, 1))
    t = np.zeros(n)
    counts = np.zeros((n, NCAT), dtype=np.int64)
    rows_all = np.arange(n)
    r = streams.draw(rows_all)
    active = np.ones(n, dtype=bool)
    njumps = 0
    while active.any():
        idx = rows_all[active]
        remaining = duration - t[idx]
        full = remaining > h
        s = np.where(full, h, remaining)
        cand = np.empty((idx.size, d), dtype=complex)
        if full.any():
            cand[full] = _mv(prop, psi[idx[full]])
        if (~full).any():
            cand[~full] = _expmv(ham, psi[idx[~full]], s[~full])
        n1 = _norm2(cand)
        ok = n1 > r[idx]

        rows = idx[ok]
        psi[rows] = cand[ok]
        t[rows] += s[ok]
        active[rows[~full[ok]]] = False

        jr = idx[~ok]
        if jr.size == 0:
            continue
        n0 = _norm2(psi[jr])
        sc, phi = _crossing(ham, gsum, psi[jr], cand[~ok], n0, n1[~ok], s[~ok], r[jr])
        t[jr] += sc
        lphi = np.stack([_mv(op, phi) for op in jumps])  # (K, m, d)
        w = _norm2(lphi)  # (K, m)
        u = streams.draw(jr) * w.sum(axis=0)
        cum = np.cumsum(w, axis=0)
        chosen = np.argmax(u[None, :] < cum, axis=0)
        chosen[~(u < cum[-1])] = len(jumps) - 1
        for _ in range(len(jumps)):
            zero = (w[chosen, np.arange(jr.size)] <= 0) & (chosen > 0)
            if not zero.any():
                break
            chosen[zero] -= 1
        m = np.arange(jr.size)
        psi[jr] = lphi[chosen, m] / np.sqrt(w[chosen, m])[:, None]
        np.add.at(counts, (jr, category[chosen]), 1)
        njumps += jr.size
        r[jr] = streams.draw(jr)
    psi /= np.sqrt(_norm2(psi))[:, None]
    return counts, psi, njumps
