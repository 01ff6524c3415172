"""Element-wise coordinate-descent updates for factors and core.

Both regularizers are handled: ``"lf"`` (squared Frobenius penalty) and
``"l1"`` (absolute-value penalty, soft-thresholded). Each element update is
the exact minimizer of the regularized loss restricted to that element, with
all other elements held fixed. Pruned elements are never touched.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend
from .model import TuckerModel, residuals
from .tensor import ModeIndex, SparseTensor

REGULARIZERS = ("lf", "l1")
SOLVERS = ("block", "cd")


def _ranks(m: TuckerModel) -> np.ndarray:
    return np.array(m.ranks, dtype=np.int64)


def _check_reg(regularizer: str) -> bool:
    if regularizer not in REGULARIZERS:
        raise ValueError(f"regularizer must be one of {REGULARIZERS}, got {regularizer!r}")
    return regularizer == "l1"


def _check_solver(solver: str) -> str:
    if solver not in SOLVERS:
        raise ValueError(f"solver must be one of {SOLVERS}, got {solver!r}")
    return solver


@dataclass
class RowUpdateScratch:
    """Per-row quantities for one factor row.

    ``delta[e]`` is the delta vector of the e-th observed entry in the row,
    ``v`` the J_n x J_n Gram matrix of those vectors and ``xdelta`` the
    value-weighted sum of them.
    """

    entries: np.ndarray
    delta: np.ndarray
    v: np.ndarray
    xdelta: np.ndarray


def compute_delta(m: TuckerModel, alpha, n: int) -> np.ndarray:
    """delta_alpha^(n): for each column j of mode n, the sum over core
    elements with mode-n index j of the core value times the other modes'
    factor entries at ``alpha``."""
    alpha = tuple(int(i) for i in alpha)
    out = np.zeros(m.ranks[n])
    for b, g in enumerate(m.core_flat):
        if g == 0.0:
            continue
        p = g
        for k, jk in enumerate(m.core_index[b]):
            if k != n:
                p *= m.factors[k][alpha[k], jk]
        out[m.core_index[b, n]] += p
    return out


def row_scratch(m: TuckerModel, t: SparseTensor, idx: ModeIndex, n: int, i: int) -> RowUpdateScratch:
    ent = idx.bucket(n, i)
    delta = np.array([compute_delta(m, t.indices[a], n) for a in ent]).reshape(len(ent), m.ranks[n])
    return RowUpdateScratch(ent, delta, delta.T @ delta, delta.T @ t.values[ent])


def _update_row(m, t, idx, n, i, lam, l1, backend):
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    ent = np.ascontiguousarray(idx.bucket(n, i), dtype=np.int64)
    if ent.size == 0:
        return m.factors[n][i]
    k = _backend.get(backend)
    k.factor_sweep(n, t.indices, t.values, np.array([i], dtype=np.int64),
                   np.array([0, ent.size], dtype=np.int64), ent, m.core_flat, m.core_index,
                   m.factor_buffer, m.offsets, _ranks(m), m.factor_mask_buffer, float(lam), l1,
                   False, 1, 1)
    return m.factors[n][i]


def update_factor_row_lf(m: TuckerModel, t: SparseTensor, idx: ModeIndex, n: int, i: int,
                         lam: float, backend=None) -> np.ndarray:
    """Sequentially update the unpruned entries of row ``i`` of factor ``n``
    under the Frobenius penalty. Rows with no observed entries are left as is."""
    return _update_row(m, t, idx, n, i, lam, False, backend)


def update_factor_row_l1(m: TuckerModel, t: SparseTensor, idx: ModeIndex, n: int, i: int,
                         lam: float, backend=None) -> np.ndarray:
    """Same sweep as :func:`update_factor_row_lf` with soft-thresholding."""
    return _update_row(m, t, idx, n, i, lam, True, backend)


def update_all_factors(m: TuckerModel, t: SparseTensor, idx: ModeIndex, lam: float,
                       regularizer: str = "lf", threads: int = 1, backend=None,
                       solver: str = "cd", inner: int = 1) -> TuckerModel:
    """One sweep over every factor matrix, mode by mode, rows in parallel.

    With ``solver="cd"`` each unpruned element of a row is updated once, in
    column order. ``solver="block"`` minimizes jointly over the row's unpruned
    elements: a direct solve for the Frobenius penalty, or up to ``inner``
    repeated element passes (until they stop changing) for L1.
    """
    l1 = _check_reg(regularizer)
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    k = _backend.get(backend)
    ranks = _ranks(m)
    for n in range(m.order):
        k.factor_sweep(n, t.indices, t.values, idx.rows[n], idx.ptr[n], idx.perm[n],
                       m.core_flat, m.core_index, m.factor_buffer, m.offsets, ranks,
                       m.factor_mask_buffer, float(lam), l1, _check_solver(solver) == "block",
                       int(inner) if solver == "block" else 1, int(threads))
    return m


def update_core(m: TuckerModel, t: SparseTensor, lam: float, regularizer: str = "lf",
                resid: np.ndarray | None = None, threads: int = 1, backend=None) -> np.ndarray:
    """Sequential row-major sweep over the unpruned core elements.

    ``resid`` (X - B over observed entries) is rebuilt when not supplied and
    is kept current through the sweep. Returns the updated residuals.
    """
    l1 = _check_reg(regularizer)
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if resid is None:
        resid = residuals(m, t, threads, backend)
    resid = np.ascontiguousarray(resid, dtype=np.float64)
    k = _backend.get(backend)
    k.core_sweep(t.indices, resid, m.core_flat, m.core_index, m.core_mask.reshape(-1).view(np.uint8),
                 m.factor_buffer, m.offsets, _ranks(m), float(lam), l1)
    return resid


def update_core_lf(m, t, lam, resid=None, threads=1, backend=None):
    return update_core(m, t, lam, "lf", resid, threads, backend)


def update_core_l1(m, t, lam, resid=None, threads=1, backend=None):
    return update_core(m, t, lam, "l1", resid, threads, backend)


def update_core_block(m: TuckerModel, t: SparseTensor, lam: float, regularizer: str = "lf",
                      inner: int = 100, threads: int = 1, backend=None) -> TuckerModel:
    """Minimize jointly over all unpruned core elements.

    Builds the Gram matrix H = K^T K and h = K^T x once (K[a, b] is the
    product of factor entries for core position b at entry a). Under the
    Frobenius penalty the restricted normal equations are solved directly;
    under L1, element-wise soft-threshold passes over H run until no element
    moves (at most ``inner`` passes).
    """
    l1 = _check_reg(regularizer)
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    G = m.core.size
    H = np.empty((G, G))
    h = np.empty(G)
    _backend.get(backend).core_gram(t.indices, t.values, m.core_index, m.factor_buffer, m.offsets,
                                    _ranks(m), H, h, int(threads))
    g = m.core_flat
    free = np.flatnonzero(~m.core_mask.reshape(-1))
    if free.size == 0:
        return m
    if not l1:
        A = H[np.ix_(free, free)] + lam * np.eye(free.size)
        try:
            L = np.linalg.cholesky(A)
            g[free] = np.linalg.solve(L.T, np.linalg.solve(L, h[free]))
            return m
        except np.linalg.LinAlgError:
            pass  # singular with lam == 0: fall through to element passes
    for _ in range(max(int(inner), 1)):
        change = 0.0
        for b in free:
            s = h[b] - H[b] @ g + H[b, b] * g[b]
            new = _l1_scalar(s, H[b, b], lam, g[b]) if l1 else _lf_scalar(s, H[b, b], lam, g[b])
            change = max(change, abs(new - g[b]))
            g[b] = new
        if change <= 1e-13 * (1.0 + np.max(np.abs(g))):
            break
    return m


def _lf_scalar(s, vjj, lam, old):
    den = vjj + lam
    return old if den == 0 else s / den


def _l1_scalar(s, vjj, lam, old):
    g = -2.0 * s
    d = 2.0 * vjj
    if g > lam:
        return (lam - g) / d if d > 0 else old
    if g < -lam:
        return -(lam + g) / d if d > 0 else old
    return 0.0


def objective(m: TuckerModel, t: SparseTensor, lam: float, regularizer: str = "lf",
              resid: np.ndarray | None = None) -> float:
    """Regularized loss: squared residuals over observed entries plus penalty."""
    l1 = _check_reg(regularizer)
    if resid is None:
        resid = residuals(m, t)
    fit = float(np.sum(resid * resid))
    if l1:
        pen = float(np.sum(np.abs(m.core)) + np.sum(np.abs(m.factor_buffer)))
    else:
        pen = float(np.sum(m.core * m.core) + np.sum(m.factor_buffer * m.factor_buffer))
    return fit + lam * pen
