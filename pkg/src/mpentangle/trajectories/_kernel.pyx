# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled quantum-jump kernel.

One call runs a batch of trajectories, each driven by its own numpy bit
generator (passed as the ``capsule`` of a ``BitGenerator``).  Random numbers
are consumed in a fixed order per trajectory: the first jump threshold, then
for every jump the channel draw followed by the next threshold.  The pure
Python fallback follows the same order.
"""
from cpython.pycapsule cimport PyCapsule_GetPointer, PyCapsule_IsValid
from libc.math cimport fabs, sqrt
from numpy.random cimport bitgen_t

import numpy as np

cdef enum:
    MAXD = 4
    MAXK = 8
    NCAT = 4

cdef double TAYLOR_TOL = 1e-34
cdef double CROSS_TOL = 1e-12


cdef inline double norm2(const double complex* v, int d) noexcept nogil:
    cdef double acc = 0.0
    cdef int i
    for i in range(d):
        acc += v[i].real * v[i].real + v[i].imag * v[i].imag
    return acc


cdef inline void matvec(const double complex* m, const double complex* v,
                        double complex* out, int d) noexcept nogil:
    cdef int i, j
    cdef double complex acc
    for i in range(d):
        acc = 0
        for j in range(d):
            acc = acc + m[i * d + j] * v[j]
        out[i] = acc


cdef void expmv(const double complex* ham, const double complex* v, double s,
                double complex* out, int d) noexcept nogil:
    # exp(-i H s) v by Taylor series; the step keeps ||H s|| small
    cdef double complex term[MAXD]
    cdef double complex tmp[MAXD]
    cdef double complex f
    cdef int i, k
    for i in range(d):
        term[i] = v[i]
        out[i] = v[i]
    for k in range(1, 60):
        matvec(ham, term, tmp, d)
        f = -1j * s / k
        for i in range(d):
            term[i] = f * tmp[i]
            out[i] = out[i] + term[i]
        if norm2(term, d) <= TAYLOR_TOL * norm2(out, d):
            break


cdef double expect(const double complex* m, const double complex* v, int d) noexcept nogil:
    cdef double complex tmp[MAXD]
    cdef double complex acc = 0
    cdef int i
    matvec(m, v, tmp, d)
    for i in range(d):
        acc = acc + v[i].conjugate() * tmp[i]
    return acc.real


cdef double hermite_root(double f0, double f1, double d0, double d1, double s) noexcept nogil:
    # root of the cubic Hermite interpolant of f on [0, s]; f0 > 0 >= f1
    cdef double u, p, dp, u2, u3, lo = 0.0, hi = 1.0
    cdef int it
    u = f0 / (f0 - f1)
    for it in range(8):
        u2 = u * u
        u3 = u2 * u
        p = (2 * u3 - 3 * u2 + 1) * f0 + (u3 - 2 * u2 + u) * s * d0 \
            + (-2 * u3 + 3 * u2) * f1 + (u3 - u2) * s * d1
        if p > 0:
            lo = u
        else:
            hi = u
        dp = ((6 * u2 - 6 * u) * f0 + (3 * u2 - 4 * u + 1) * s * d0
              + (-6 * u2 + 6 * u) * f1 + (3 * u2 - 2 * u) * s * d1)
        if dp < 0:
            u = u - p / dp
        else:
            u = 0.5 * (lo + hi)
        if not (u > lo and u < hi):
            u = 0.5 * (lo + hi)
    return u * s


cdef double find_crossing(const double complex* ham, const double complex* gsum,
                          const double complex* psi, const double complex* cand,
                          double n0, double n1, double s, double r,
                          double complex* phi, int d) noexcept nogil:
    # solve ||exp(-i H x) psi||^2 = r on (0, s]; safeguarded Newton
    cdef double a = 0.0, b = s, x, f, deriv, xn
    cdef int it
    x = hermite_root(n0 - r, n1 - r, -expect(gsum, psi, d), -expect(gsum, cand, d), s)
    if not (x > a and x <= b):
        x = 0.5 * (a + b)
    for it in range(200):
        expmv(ham, psi, x, phi, d)
        f = norm2(phi, d) - r
        if fabs(f) <= CROSS_TOL * r:
            break
        if f > 0:
            a = x
        else:
            b = x
        if b - a <= 1e-15 * s:
            break
        deriv = -expect(gsum, phi, d)
        if deriv < 0:
            xn = x - f / deriv
        else:
            xn = 0.5 * (a + b)
        if not (xn > a and xn < b):
            xn = 0.5 * (a + b)
        x = xn
    return x


cdef long run_one(bitgen_t* rng, const double complex* ham, const double complex* prop,
                  const double complex* gsum, const double complex* jumps,
                  const long* category, int nk, const double complex* psi0,
                  double h, double duration, int d,
                  long long* counts, double complex* psi_out) noexcept nogil:
    cdef double complex psi[MAXD]
    cdef double complex cand[MAXD]
    cdef double complex phi[MAXD]
    cdef double complex lphi[MAXK * MAXD]
    cdef double weights[MAXK]
    cdef double t = 0.0, r, remaining, s, n0, n1, total, u, acc, inv
    cdef int i, k, chosen, final
    cdef long njumps = 0

    for i in range(d):
        psi[i] = psi0[i]
    for i in range(NCAT):
        counts[i] = 0
    r = rng.next_double(rng.state)

    while True:
        remaining = duration - t
        if remaining > h:
            s = h
            final = 0
            matvec(prop, psi, cand, d)
        else:
            s = remaining
            final = 1
            expmv(ham, psi, s, cand, d)
        n1 = norm2(cand, d)
        if n1 > r:
            for i in range(d):
                psi[i] = cand[i]
            t += s
            if final:
                break
            continue

        n0 = norm2(psi, d)
        s = find_crossing(ham, gsum, psi, cand, n0, n1, s, r, phi, d)
        t += s

        total = 0.0
        for k in range(nk):
            matvec(&jumps[k * d * d], phi, &lphi[k * d], d)
            weights[k] = norm2(&lphi[k * d], d)
            total += weights[k]
        u = rng.next_double(rng.state) * total
        chosen = nk - 1
        acc = 0.0
        for k in range(nk):
            acc += weights[k]
            if u < acc:
                chosen = k
                break
        while weights[chosen] <= 0.0 and chosen > 0:
            chosen -= 1
        inv = 1.0 / sqrt(weights[chosen])
        for i in range(d):
            psi[i] = lphi[chosen * d + i] * inv
        counts[category[chosen]] += 1
        njumps += 1
        r = rng.next_double(rng.state)

    n0 = sqrt(norm2(psi, d))
    for i in range(d):
        psi_out[i] = psi[i] / n0
    return njumps


def run_batch(list capsules, double complex[:, ::1] ham, double complex[:, ::1] prop,
              double complex[:, ::1] gsum, double complex[:, :, ::1] jumps,
              long[::1] category, double complex[::1] psi0, double h, double duration,
              long long[:, ::1] counts, double complex[:, ::1] psi_out):
    """Run ``len(capsules)`` trajectories, filling ``counts`` and ``psi_out``."""
    cdef int d = ham.shape[0]
    cdef int nk = jumps.shape[0]
    cdef Py_ssize_t n = len(capsules), i
    cdef bitgen_t* rng
    cdef long total = 0
    cdef const char* name = "BitGenerator"
    if d > MAXD or nk > MAXK:
        raise ValueError("system too large for the compiled kernel")
    if counts.shape[0] < n or psi_out.shape[0] < n:
        raise ValueError("output arrays are too small")
    for i in range(n):
        capsule = capsules[i]
        if not PyCapsule_IsValid(capsule, name):
            raise ValueError("invalid bit generator capsule")
        rng = <bitgen_t*> PyCapsule_GetPointer(capsule, name)
        with nogil:
            total += run_one(rng, &ham[0, 0], &prop[0, 0], &gsum[0, 0], &jumps[0, 0, 0],
                             &category[0], nk, &psi0[0], h, duration, d,
                             &counts[i, 0], &psi_out[i, 0])
    return total
