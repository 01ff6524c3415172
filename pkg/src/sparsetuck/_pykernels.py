"""Pure numpy implementations of the hot kernels.

Signatures match ``_ckernels`` exactly. Arrays follow the packed layout of
:class:`~sparsetuck.model.TuckerModel`: ``fac`` holds every factor matrix
row-major at ``off[n]``, ``core`` is the flattened core and ``core_idx[b]`` the
multi-index of core position ``b``. ``nthreads`` is accepted and ignored.
"""
import numpy as np

_CHUNK = 1 << 16
# relative change below which repeated element passes stop
_INNER_TOL = 1e-13


def _views(fac, off, ranks):
    n_modes = len(ranks)
    ends = list(off[1:]) + [fac.shape[0]]
    return [fac[off[k]:ends[k]].reshape(-1, ranks[k]) for k in range(n_modes)]


def _khatri_rao_rows(mats):
    """Row-wise Kronecker product; the last matrix varies fastest."""
    out = mats[0]
    for m in mats[1:]:
        out = (out[:, :, None] * m[:, None, :]).reshape(out.shape[0], -1)
    return out


def _delta(idx, core, n, A, ranks):
    """delta[e, j]: sum over core slice j of mode n times the other factors."""
    others = [A[k][idx[:, k]] for k in range(len(ranks)) if k != n]
    g = np.moveaxis(core.reshape(tuple(ranks)), n, 0).reshape(ranks[n], -1)
    if not others:
        return np.broadcast_to(g[:, 0], (idx.shape[0], ranks[n])).copy()
    return _khatri_rao_rows(others) @ g.T


def _lf_rule(s, vjj, lam, old):
    den = vjj + lam
    ok = den != 0
    return np.where(ok, s / np.where(ok, den, 1.0), old)


def _l1_rule(s, vjj, lam, old):
    g = -2.0 * s
    d = 2.0 * vjj
    out = np.zeros_like(old)
    pos = g > lam
    neg = g < -lam
    ok = d > 0
    safe_d = np.where(ok, d, 1.0)
    out = np.where(pos & ok, (lam - g) / safe_d, out)
    out = np.where(neg & ok, -(lam + g) / safe_d, out)
    return np.where((pos | neg) & ~ok, old, out)


def reconstruct(idx, core, core_idx, fac, off, ranks, out, nthreads):
    A = _views(fac, off, ranks)
    for s in range(0, idx.shape[0], _CHUNK):
        sub = idx[s:s + _CHUNK]
        kr = _khatri_rao_rows([A[k][sub[:, k]] for k in range(len(ranks))])
        out[s:s + _CHUNK] = kr @ core


def _solve_rows(V, xd, a, masked, lam):
    """Exact minimizer over the unmasked entries of each row (Frobenius penalty)."""
    J = V.shape[1]
    M = V + lam * np.eye(J)
    b = xd.copy()
    free = ~masked
    M = M * (free[:, :, None] & free[:, None, :]) + np.eye(J) * masked[:, None, :]
    b = np.where(free, b, 0.0)
    try:
        sol = np.linalg.solve(M, b[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError:
        sol = (np.linalg.pinv(M) @ b[:, :, None])[:, :, 0]
    return np.where(free, sol, a)


def _row_passes(V, xd, a, masked, lam, rule, passes):
    J = V.shape[1]
    active = np.ones(a.shape[0], dtype=bool)
    for _ in range(passes):
        old = a.copy()
        for j in range(J):
            others = np.arange(J) != j
            s = xd[:, j] - np.sum(V[:, j, others] * a[:, others], axis=1)
            new = rule(s, V[:, j, j], lam, a[:, j])
            a[:, j] = np.where(masked[:, j] | ~active, a[:, j], new)
        if passes > 1:
            change = np.max(np.abs(a - old), axis=1)
            active &= change > _INNER_TOL * (1.0 + np.max(np.abs(a), axis=1))
            if not active.any():
                break
    return a


def factor_sweep(n, idx, vals, rows, ptr, perm, core, core_idx, fac, off, ranks, fmask, lam, l1,
                 exact, inner, nthreads):
    A = _views(fac, off, ranks)
    M = _views(fmask, off, ranks)
    rule = _l1_rule if l1 else _lf_rule
    n_rows = rows.shape[0]
    start = 0
    while start < n_rows:
        # block of rows holding at most ~_CHUNK entries (at least one row)
        stop = int(np.searchsorted(ptr, ptr[start] + _CHUNK, side="right")) - 1
        stop = min(max(stop, start + 1), n_rows)
        p = ptr[start:stop + 1]
        ent = perm[p[0]:p[-1]]
        delta = _delta(idx[ent], core, n, A, ranks)
        seg = p[:-1] - p[0]
        V = np.add.reduceat(delta[:, :, None] * delta[:, None, :], seg, axis=0)
        xd = np.add.reduceat(vals[ent][:, None] * delta, seg, axis=0)
        r = rows[start:stop]
        a = A[n][r].copy()
        masked = M[n][r].astype(bool)
        if exact and not l1:
            a = _solve_rows(V, xd, a, masked, lam)
        else:
            a = _row_passes(V, xd, a, masked, lam, rule, max(int(inner), 1))
        A[n][r] = a
        start = stop


def core_gram(idx, vals, core_idx, fac, off, ranks, H, h, nthreads):
    A = _views(fac, off, ranks)
    H[...] = 0.0
    h[...] = 0.0
    for s in range(0, idx.shape[0], _CHUNK):
        sub = idx[s:s + _CHUNK]
        kr = _khatri_rao_rows([A[k][sub[:, k]] for k in range(len(ranks))])
        H += kr.T @ kr
        h += kr.T @ vals[s:s + _CHUNK]


def core_sweep(idx, resid, core, core_idx, cmask, fac, off, ranks, lam, l1):
    A = _views(fac, off, ranks)
    cols = [A[k][idx[:, k]] for k in range(len(ranks))]
    for b in range(core.shape[0]):
        if cmask[b]:
            continue
        P = cols[0][:, core_idx[b, 0]].copy()
        for k in range(1, len(ranks)):
            P *= cols[k][:, core_idx[b, k]]
        g = core[b]
        num = np.sum((resid + g * P) * P)
        den = np.sum(P * P)
        if l1:
            new = float(_l1_rule(np.array([num]), np.array([den]), lam, np.array([g]))[0])
        else:
            new = float(_lf_rule(np.array([num]), np.array([den]), lam, np.array([g]))[0])
        if new != g:
            resid -= (new - g) * P
        core[b] = new


def core_resp(idx, resid, core, core_idx, fac, off, ranks, out, nthreads):
    A = _views(fac, off, ranks)
    cols = [A[k][idx[:, k]] for k in range(len(ranks))]
    for b in range(core.shape[0]):
        g = core[b]
        if g == 0.0:
            out[b] = 0.0
            continue
        gp = g * cols[0][:, core_idx[b, 0]]
        for k in range(1, len(ranks)):
            gp = gp * cols[k][:, core_idx[b, k]]
        out[b] = np.sum((2.0 * resid + gp) * gp)


def factor_resp(n, idx, resid, rows, ptr, perm, core, core_idx, fac, off, ranks, out, nthreads):
    A = _views(fac, off, ranks)
    J = int(ranks[n])
    out2 = out.reshape(-1, J)
    out2[...] = 0.0
    if rows.shape[0] == 0:
        return
    ent = perm[:ptr[-1]]
    delta = _delta(idx[ent], core, n, A, ranks)
    part = delta * A[n][idx[ent, n]]
    contrib = (2.0 * resid[ent][:, None] + part) * part
    out2[rows] = np.add.reduceat(contrib, ptr[:-1], axis=0)
