# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""OpenMP kernels for entry reconstruction, coordinate-descent sweeps and
responsibility accumulation.

Every parallel loop writes disjoint outputs and accumulates in a fixed order
per output, so results do not depend on the thread count.
"""
from cython.parallel cimport parallel, prange
from libc.stdint cimport int64_t, uint8_t
from libc.math cimport fabs, sqrt
from libc.stdlib cimport free, malloc

import numpy as np

cdef double INNER_TOL = 1e-13
cdef Py_ssize_t GRAM_CHUNKS = 64
# max doubles held in per-chunk partial Gram matrices
cdef Py_ssize_t GRAM_BUDGET = 1 << 24


cdef inline double _recon(Py_ssize_t a, const int64_t[:, ::1] idx, const double[::1] core,
                          const int64_t[:, ::1] core_idx, const double[::1] fac,
                          const int64_t[::1] off, const int64_t[::1] ranks) noexcept nogil:
    cdef Py_ssize_t b, k
    cdef Py_ssize_t G = core.shape[0], N = ranks.shape[0]
    cdef double total = 0.0, p
    for b in range(G):
        p = core[b]
        if p == 0.0:
            continue
        for k in range(N):
            p = p * fac[off[k] + idx[a, k] * ranks[k] + core_idx[b, k]]
        total = total + p
    return total


cdef inline void _delta(Py_ssize_t a, int n, const int64_t[:, ::1] idx, const double[::1] core,
                        const int64_t[:, ::1] core_idx, const double[::1] fac,
                        const int64_t[::1] off, const int64_t[::1] ranks,
                        double *delta) noexcept nogil:
    cdef Py_ssize_t b, k, j
    cdef Py_ssize_t G = core.shape[0], N = ranks.shape[0], J = ranks[n]
    cdef double p
    for j in range(J):
        delta[j] = 0.0
    for b in range(G):
        p = core[b]
        if p == 0.0:
            continue
        for k in range(N):
            if k != n:
                p = p * fac[off[k] + idx[a, k] * ranks[k] + core_idx[b, k]]
        delta[core_idx[b, n]] += p


cdef inline double _lf_rule(double s, double vjj, double lam, double old) noexcept nogil:
    cdef double den = vjj + lam
    if den == 0.0:
        return old
    return s / den


cdef inline double _l1_rule(double s, double vjj, double lam, double old) noexcept nogil:
    cdef double g = -2.0 * s
    cdef double d = 2.0 * vjj
    if g > lam:
        return (lam - g) / d if d > 0.0 else old
    if g < -lam:
        return -(lam + g) / d if d > 0.0 else old
    return 0.0


def reconstruct(const int64_t[:, ::1] idx, const double[::1] core, const int64_t[:, ::1] core_idx,
                const double[::1] fac, const int64_t[::1] off, const int64_t[::1] ranks,
                double[::1] out, int nthreads):
    cdef Py_ssize_t a, nnz = idx.shape[0]
    if nnz == 0:
        return
    with nogil:
        for a in prange(nnz, num_threads=max(nthreads, 1), schedule="static"):
            out[a] = _recon(a, idx, core, core_idx, fac, off, ranks)


cdef inline bint _solve_row(Py_ssize_t J, const double *V, const double *xd, double *a,
                            const uint8_t *mask, double lam, double *L, double *y,
                            Py_ssize_t *free_idx) noexcept nogil:
    """Cholesky solve of the row problem restricted to unmasked columns.

    Returns False (leaving ``a`` untouched) if the system is not positive definite.
    """
    cdef Py_ssize_t U = 0, p, q, k, j
    cdef double acc, dmax = 0.0
    for j in range(J):
        if not mask[j]:
            free_idx[U] = j
            U += 1
    if U == 0:
        return True
    for p in range(U):
        for q in range(U):
            L[p * U + q] = V[free_idx[p] * J + free_idx[q]]
        L[p * U + p] += lam
        if L[p * U + p] > dmax:
            dmax = L[p * U + p]
        y[p] = xd[free_idx[p]]
    if dmax <= 0.0:
        return False
    for p in range(U):
        for q in range(p + 1):
            acc = L[p * U + q]
            for k in range(q):
                acc = acc - L[p * U + k] * L[q * U + k]
            if p == q:
                if acc <= 1e-13 * dmax:
                    return False
                L[p * U + p] = sqrt(acc)
            else:
                L[p * U + q] = acc / L[q * U + q]
    for p in range(U):
        acc = y[p]
        for k in range(p):
            acc = acc - L[p * U + k] * y[k]
        y[p] = acc / L[p * U + p]
    for p in range(U - 1, -1, -1):
        acc = y[p]
        for k in range(p + 1, U):
            acc = acc - L[k * U + p] * y[k]
        y[p] = acc / L[p * U + p]
    for p in range(U):
        a[free_idx[p]] = y[p]
    return True


cdef inline void _row_passes(Py_ssize_t J, const double *V, const double *xd, double *a,
                             const uint8_t *mask, double lam, bint l1, int passes) noexcept nogil:
    cdef Py_ssize_t j, t
    cdef int it
    cdef double s, new, change, scale
    for it in range(passes):
        change = 0.0
        scale = 0.0
        for j in range(J):
            if mask[j]:
                continue
            s = xd[j]
            for t in range(J):
                if t != j:
                    s = s - V[j * J + t] * a[t]
            if l1:
                new = _l1_rule(s, V[j * J + j], lam, a[j])
            else:
                new = _lf_rule(s, V[j * J + j], lam, a[j])
            if fabs(new - a[j]) > change:
                change = fabs(new - a[j])
            a[j] = new
        for j in range(J):
            if fabs(a[j]) > scale:
                scale = fabs(a[j])
        if change <= INNER_TOL * (1.0 + scale):
            break


def factor_sweep(int n, const int64_t[:, ::1] idx, const double[::1] vals,
                 const int64_t[::1] rows, const int64_t[::1] ptr, const int64_t[::1] perm,
                 const double[::1] core, const int64_t[:, ::1] core_idx,
                 double[::1] fac, const int64_t[::1] off, const int64_t[::1] ranks,
                 const uint8_t[::1] fmask, double lam, bint l1, bint exact, int inner,
                 int nthreads):
    cdef Py_ssize_t r, e, j, t, a, base
    cdef Py_ssize_t n_rows = rows.shape[0]
    cdef Py_ssize_t J = ranks[n]
    cdef double *buf
    cdef double *V
    cdef double *xd
    cdef double *delta
    cdef double *L
    cdef double *y
    cdef Py_ssize_t *free_idx
    cdef double x
    cdef int passes = inner if inner > 1 else 1
    if n_rows == 0:
        return
    with nogil, parallel(num_threads=max(nthreads, 1)):
        buf = <double *> malloc((2 * J * J + 3 * J) * sizeof(double))
        free_idx = <Py_ssize_t *> malloc(J * sizeof(Py_ssize_t))
        if buf == NULL or free_idx == NULL:
            with gil:
                raise MemoryError()
        V = buf
        xd = buf + J * J
        delta = xd + J
        y = delta + J
        L = y + J
        for r in prange(n_rows, schedule="dynamic", chunksize=16):
            for j in range(J * J):
                V[j] = 0.0
            for j in range(J):
                xd[j] = 0.0
            for e in range(ptr[r], ptr[r + 1]):
                a = perm[e]
                _delta(a, n, idx, core, core_idx, fac, off, ranks, delta)
                x = vals[a]
                for j in range(J):
                    xd[j] += x * delta[j]
                    for t in range(J):
                        V[j * J + t] += delta[j] * delta[t]
            base = off[n] + rows[r] * J
            if exact and not l1:
                if not _solve_row(J, V, xd, &fac[base], &fmask[base], lam, L, y, free_idx):
                    _row_passes(J, V, xd, &fac[base], &fmask[base], lam, l1, passes)
            else:
                _row_passes(J, V, xd, &fac[base], &fmask[base], lam, l1, passes)
        free(buf)
        free(free_idx)


def core_gram(const int64_t[:, ::1] idx, const double[::1] vals, const int64_t[:, ::1] core_idx,
              const double[::1] fac, const int64_t[::1] off, const int64_t[::1] ranks,
              double[:, ::1] H, double[::1] h, int nthreads):
    """H = K^T K and h = K^T x, with K[a, b] the product of factor entries.

    Entries are split into a fixed number of chunks whose partial sums are
    combined in chunk order, so the result does not depend on ``nthreads``.
    """
    cdef Py_ssize_t G = core_idx.shape[0], N = ranks.shape[0], nnz = idx.shape[0]
    cdef Py_ssize_t nchunks = min(GRAM_CHUNKS, max(nnz, 1))
    cdef Py_ssize_t budget = max(1, GRAM_BUDGET // max(G * G, 1))
    if nchunks > budget:
        nchunks = budget
    parts_np = np.zeros((nchunks, G, G))
    hp_np = np.zeros((nchunks, G))
    cdef double[:, :, ::1] parts = parts_np
    cdef double[:, ::1] hp = hp_np
    cdef Py_ssize_t c, a, b, b2, k, lo, hi
    cdef double *P
    cdef double p, x
    with nogil, parallel(num_threads=max(nthreads, 1)):
        P = <double *> malloc((G if G > 0 else 1) * sizeof(double))
        if P == NULL:
            with gil:
                raise MemoryError()
        for c in prange(nchunks, schedule="dynamic"):
            lo = c * nnz // nchunks
            hi = (c + 1) * nnz // nchunks
            for a in range(lo, hi):
                for b in range(G):
                    p = 1.0
                    for k in range(N):
                        p = p * fac[off[k] + idx[a, k] * ranks[k] + core_idx[b, k]]
                    P[b] = p
                x = vals[a]
                for b in range(G):
                    hp[c, b] += x * P[b]
                    for b2 in range(b, G):
                        parts[c, b, b2] += P[b] * P[b2]
        free(P)
    H[:, :] = 0.0
    h[:] = 0.0
    for c in range(nchunks):
        for b in range(G):
            h[b] += hp[c, b]
            for b2 in range(b, G):
                H[b, b2] += parts[c, b, b2]
    for b in range(G):
        for b2 in range(b):
            H[b, b2] = H[b2, b]


def core_sweep(const int64_t[:, ::1] idx, double[::1] resid, double[::1] core,
               const int64_t[:, ::1] core_idx, const uint8_t[::1] cmask,
               const double[::1] fac, const int64_t[::1] off, const int64_t[::1] ranks,
               double lam, bint l1):
    cdef Py_ssize_t b, a, k
    cdef Py_ssize_t G = core.shape[0], N = ranks.shape[0], nnz = idx.shape[0]
    cdef double g, p, num, den, new
    cdef double *P = <double *> malloc((nnz if nnz > 0 else 1) * sizeof(double))
    if P == NULL:
        raise MemoryError()
    try:
        with nogil:
            for b in range(G):
                if cmask[b]:
                    continue
                g = core[b]
                num = 0.0
                den = 0.0
                for a in range(nnz):
                    p = 1.0
                    for k in range(N):
                        p = p * fac[off[k] + idx[a, k] * ranks[k] + core_idx[b, k]]
                    P[a] = p
                    num = num + (resid[a] + g * p) * p
                    den = den + p * p
                if l1:
                    new = _l1_rule(num, den, lam, g)
                else:
                    new = _lf_rule(num, den, lam, g)
                if new != g:
                    for a in range(nnz):
                        resid[a] = resid[a] - (new - g) * P[a]
                core[b] = new
    finally:
        free(P)


def core_resp(const int64_t[:, ::1] idx, const double[::1] resid, const double[::1] core,
              const int64_t[:, ::1] core_idx, const double[::1] fac, const int64_t[::1] off,
              const int64_t[::1] ranks, double[::1] out, int nthreads):
    cdef Py_ssize_t b, a, k
    cdef Py_ssize_t G = core.shape[0], N = ranks.shape[0], nnz = idx.shape[0]
    cdef double gp, acc
    with nogil:
        for b in prange(G, num_threads=max(nthreads, 1), schedule="dynamic"):
            if core[b] == 0.0:
                out[b] = 0.0
                continue
            acc = 0.0
            for a in range(nnz):
                gp = core[b]
                for k in range(N):
                    gp = gp * fac[off[k] + idx[a, k] * ranks[k] + core_idx[b, k]]
                acc = acc + (2.0 * resid[a] + gp) * gp
            out[b] = acc


def factor_resp(int n, const int64_t[:, ::1] idx, const double[::1] resid,
                const int64_t[::1] rows, const int64_t[::1] ptr, const int64_t[::1] perm,
                const double[::1] core, const int64_t[:, ::1] core_idx,
                const double[::1] fac, const int64_t[::1] off, const int64_t[::1] ranks,
                double[::1] out, int nthreads):
    cdef Py_ssize_t r, e, j, a, base, obase
    cdef Py_ssize_t n_rows = rows.shape[0]
    cdef Py_ssize_t J = ranks[n]
    cdef double *delta
    cdef double part
    out[:] = 0.0
    if n_rows == 0:
        return
    with nogil, parallel(num_threads=max(nthreads, 1)):
        delta = <double *> malloc(J * sizeof(double))
        if delta == NULL:
            with gil:
                raise MemoryError()
        for r in prange(n_rows, schedule="dynamic", chunksize=16):
            base = off[n] + rows[r] * J
            obase = rows[r] * J
            for e in range(ptr[r], ptr[r + 1]):
                a = perm[e]
                _delta(a, n, idx, core, core_idx, fac, off, ranks, delta)
                for j in range(J):
                    part = delta[j] * fac[base + j]
                    out[obase + j] += (2.0 * resid[a] + part) * part
        free(delta)
