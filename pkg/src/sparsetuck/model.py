"""Tucker model state plus reconstruction, error, sparsity and normalization."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _backend
from .tensor import SparseTensor, TensorFormatError, load_coo


class TuckerModel:
    """Dense core, dense factor matrices and their prune masks.

    All factor matrices live in one contiguous buffer (``factor_buffer``) and
    ``factors[n]`` is an ``(I_n, J_n)`` view into it at ``offsets[n]``; masks
    are laid out the same way. The compiled kernels address factor elements
    through this packed layout. A mask value of True means pruned, and pruned
    positions always hold exactly 0.
    """

    def __init__(self, dims: Sequence[int], ranks: Sequence[int]):
        self.dims = tuple(int(d) for d in dims)
        self.ranks = tuple(int(r) for r in ranks)
        if len(self.dims) != len(self.ranks):
            raise ValueError("dims and ranks must have the same length")
        if any(r <= 0 for r in self.ranks) or any(d <= 0 for d in self.dims):
            raise ValueError(f"invalid dims {self.dims} / ranks {self.ranks}")
        if any(r > d for r, d in zip(self.ranks, self.dims)):
            raise ValueError(f"ranks {self.ranks} exceed dims {self.dims}")
        sizes = [d * r for d, r in zip(self.dims, self.ranks)]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
        self.factor_buffer = np.zeros(int(sum(sizes)), dtype=np.float64)
        self.factor_mask_buffer = np.zeros(int(sum(sizes)), dtype=np.uint8)
        self.core = np.zeros(self.ranks, dtype=np.float64)
        self.core_mask = np.zeros(self.ranks, dtype=bool)
        self.factors = [
            self.factor_buffer[o:o + s].reshape(d, r)
            for o, s, d, r in zip(self.offsets, sizes, self.dims, self.ranks)
        ]
        self.factor_masks = [
            self.factor_mask_buffer[o:o + s].reshape(d, r).view(bool)
            for o, s, d, r in zip(self.offsets, sizes, self.dims, self.ranks)
        ]
        # row-major enumeration of core positions: core_index[b] = (j_1..j_N)
        self.core_index = np.ascontiguousarray(
            np.stack(np.unravel_index(np.arange(self.core.size), self.ranks), axis=1).astype(np.int64)
        ).reshape(self.core.size, self.order)

    @classmethod
    def from_arrays(cls, core, factors, core_mask=None, factor_masks=None) -> "TuckerModel":
        core = np.asarray(core, dtype=np.float64)
        factors = [np.asarray(a, dtype=np.float64) for a in factors]
        if core.ndim != len(factors):
            raise ValueError("core order must match the number of factors")
        for n, a in enumerate(factors):
            if a.ndim != 2 or a.shape[1] != core.shape[n]:
                raise ValueError(f"factor {n} has shape {a.shape}, core expects {core.shape[n]} columns")
        m = cls([a.shape[0] for a in factors], core.shape)
        m.core[...] = core
        for n, a in enumerate(factors):
            m.factors[n][...] = a
        if core_mask is not None:
            m.core_mask[...] = core_mask
        if factor_masks is not None:
            for n, fm in enumerate(factor_masks):
                m.factor_masks[n][...] = fm
        m.apply_masks()
        return m

    @property
    def order(self) -> int:
        return len(self.dims)

    @property
    def core_flat(self) -> np.ndarray:
        return self.core.reshape(-1)

    @property
    def n_elements(self) -> int:
        return self.core.size + self.factor_buffer.size

    def copy(self) -> "TuckerModel":
        m = TuckerModel(self.dims, self.ranks)
        m.core[...] = self.core
        m.core_mask[...] = self.core_mask
        m.factor_buffer[...] = self.factor_buffer
        m.factor_mask_buffer[...] = self.factor_mask_buffer
        return m

    def apply_masks(self) -> None:
        self.core[self.core_mask] = 0.0
        self.factor_buffer[self.factor_mask_buffer.view(bool)] = 0.0

    def masked_fraction(self) -> float:
        return (int(self.core_mask.sum()) + int(self.factor_mask_buffer.sum())) / self.n_elements

    def __repr__(self):
        return f"TuckerModel(dims={self.dims}, ranks={self.ranks})"


@dataclass
class ResponsibilityTable:
    """Responsibilities of every core/factor element plus the residuals used."""

    residuals: np.ndarray
    core_resp: np.ndarray
    factor_resp: list
    base_re: float


def init_random(dims, ranks, seed=None) -> TuckerModel:
    """Uniform [0, 1) core and factors, nothing pruned."""
    m = TuckerModel(dims, ranks)
    rng = np.random.default_rng(seed)
    m.core[...] = rng.random(m.ranks)
    for a in m.factors:
        a[...] = rng.random(a.shape)
    return m


def _check_index(m: TuckerModel, alpha) -> tuple[int, ...]:
    alpha = tuple(int(i) for i in alpha)
    if len(alpha) != m.order or any(not 0 <= i < d for i, d in zip(alpha, m.dims)):
        raise IndexError(f"index {alpha} out of range for dims {m.dims}")
    return alpha


def reconstruct_entry(m: TuckerModel, alpha) -> float:
    """B(alpha): sum over core elements of core value times factor entries."""
    alpha = _check_index(m, alpha)
    total = 0.0
    for b, g in enumerate(m.core_flat):
        if g == 0.0:
            continue
        p = g
        for n, j in enumerate(m.core_index[b]):
            p *= m.factors[n][alpha[n], j]
        total += p
    return float(total)


def partial_reconstruct(m: TuckerModel, alpha, n: int, j: int) -> float:
    """Contribution to B(alpha) of core elements whose mode-n index is ``j``."""
    alpha = _check_index(m, alpha)
    if not 0 <= j < m.ranks[n]:
        raise IndexError(f"column {j} out of range for mode {n} with rank {m.ranks[n]}")
    total = 0.0
    for b in np.nonzero(m.core_index[:, n] == j)[0]:
        p = m.core_flat[b]
        for k, jk in enumerate(m.core_index[b]):
            p *= m.factors[k][alpha[k], jk]
        total += p
    return float(total)


def reconstruct_many(m: TuckerModel, indices, threads: int = 1, backend=None) -> np.ndarray:
    """Vector of B(alpha) for every row of ``indices``."""
    idx = np.ascontiguousarray(indices, dtype=np.int64).reshape(-1, m.order)
    if idx.size and (idx.min() < 0 or np.any(idx.max(axis=0) >= np.array(m.dims))):
        raise IndexError(f"query index out of range for dims {m.dims}")
    out = np.empty(idx.shape[0], dtype=np.float64)
    k = _backend.get(backend)
    k.reconstruct(idx, m.core_flat, m.core_index, m.factor_buffer, m.offsets,
                  np.array(m.ranks, dtype=np.int64), out, threads)
    return out


def residuals(m: TuckerModel, t: SparseTensor, threads: int = 1, backend=None) -> np.ndarray:
    """r_alpha = X_alpha - B(alpha) over the observed entries of ``t``."""
    return t.values - reconstruct_many(m, t.indices, threads, backend)


def re_from_residuals(r: np.ndarray, norm: float) -> float:
    if norm <= 0:
        raise ZeroDivisionError("input tensor has zero Frobenius norm")
    return float(np.sqrt(np.sum(r * r)) / norm)


def reconstruction_error(m: TuckerModel, t: SparseTensor, threads: int = 1, backend=None,
                         return_residuals: bool = False):
    """Normalized reconstruction error over the observed entries."""
    if t.norm <= 0:
        raise ZeroDivisionError("input tensor has zero Frobenius norm")
    r = residuals(m, t, threads, backend)
    re = re_from_residuals(r, t.norm)
    return (re, r) if return_residuals else re


def sparsity(m: TuckerModel) -> float:
    """Fraction of exactly-zero elements over the core and all factors."""
    zeros = int(np.count_nonzero(m.core == 0.0)) + int(np.count_nonzero(m.factor_buffer == 0.0))
    return zeros / m.n_elements


def normalize_columns(m: TuckerModel) -> TuckerModel:
    """Scale factor columns to unit norm and push the norms into the core.

    Works in place and returns ``m``. All-zero columns are left alone.
    """
    for n, a in enumerate(m.factors):
        norms = np.sqrt(np.sum(a * a, axis=0))
        scale = np.where(norms > 0, norms, 1.0)
        a /= scale
        shape = [1] * m.order
        shape[n] = -1
        m.core *= scale.reshape(shape)
    m.apply_masks()
    return m


# -- persistence ---------------------------------------------------------

def save_model(m: TuckerModel, directory) -> None:
    """Write ``factor_<n>.tsv`` (1-based n) and ``core.coo`` into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for n, a in enumerate(m.factors, start=1):
        with (d / f"factor_{n}.tsv").open("w") as fh:
            for row in a.tolist():
                fh.write("\t".join(repr(v) for v in row) + "\n")
    with (d / "core.coo").open("w") as fh:
        fh.write("# dims: " + " ".join(str(r) for r in m.ranks) + "\n")
        for b in np.flatnonzero(m.core_flat):
            fh.write(" ".join(str(int(j)) for j in m.core_index[b]) + " " + repr(float(m.core_flat[b])) + "\n")


def load_model(directory) -> TuckerModel:
    """Inverse of :func:`save_model`; zeros become pruned positions."""
    d = Path(directory)
    core_path = d / "core.coo"
    if not core_path.exists():
        raise FileNotFoundError(f"{core_path} not found")
    core_t = load_coo(core_path)
    ranks = core_t.dims
    factors = []
    for n in range(1, len(ranks) + 1):
        p = d / f"factor_{n}.tsv"
        if not p.exists():
            raise FileNotFoundError(f"{p} not found")
        rows = [ln.split("\t") for ln in p.read_text().splitlines() if ln.strip()]
        try:
            a = np.array([[float(v) for v in r] for r in rows], dtype=np.float64)
        except ValueError as e:
            raise TensorFormatError(f"{p}: {e}") from None
        if a.ndim != 2 or a.shape[1] != ranks[n - 1]:
            raise TensorFormatError(f"{p}: expected {ranks[n - 1]} columns")
        factors.append(a)
    core = np.zeros(ranks)
    core[tuple(core_t.indices.T)] = core_t.values
    return TuckerModel.from_arrays(core, factors, core == 0.0, [a == 0.0 for a in factors])
