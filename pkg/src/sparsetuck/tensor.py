"""Sparse COO tensors, text I/O, per-mode indexing and synthetic data."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class TensorFormatError(ValueError):
    """Raised for malformed or inconsistent COO input."""


@dataclass(frozen=True, eq=False)
class SparseTensor:
    """Partially observed N-way tensor stored as coordinate/value pairs.

    ``indices`` is an ``(nnz, N)`` int64 array of zero-based coordinates and
    ``values`` the matching float64 values. Instances are validated on
    construction and treated as immutable afterwards.
    """

    dims: tuple[int, ...]
    indices: np.ndarray
    values: np.ndarray
    _norm: float = field(init=False, repr=False)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        idx = np.ascontiguousarray(self.indices, dtype=np.int64)
        vals = np.ascontiguousarray(self.values, dtype=np.float64)
        if len(dims) == 0 or any(d <= 0 for d in dims):
            raise ValueError(f"dims must be positive, got {dims}")
        if idx.ndim != 2 or (idx.shape[0] > 0 and idx.shape[1] != len(dims)):
            raise ValueError(f"indices must have shape (nnz, {len(dims)}), got {idx.shape}")
        if idx.shape[0] == 0:
            idx = idx.reshape(0, len(dims))
        if vals.shape != (idx.shape[0],):
            raise ValueError("values must be a vector with one value per index row")
        if idx.size and (idx.min() < 0 or np.any(idx.max(axis=0) >= np.array(dims))):
            raise ValueError(f"coordinate out of bounds for dims {dims}")
        dup = _find_duplicate(idx)
        if dup is not None:
            raise ValueError(f"duplicate coordinate {tuple(idx[dup[0]])} at entries {dup[0]} and {dup[1]}")
        idx.flags.writeable = False
        vals.flags.writeable = False
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "_norm", float(np.sqrt(np.sum(vals * vals))))

    @property
    def order(self) -> int:
        return len(self.dims)

    @property
    def nnz(self) -> int:
        return int(self.values.shape[0])

    @property
    def norm(self) -> float:
        """Frobenius norm over the observed entries."""
        return self._norm

    def subset(self, rows: np.ndarray) -> "SparseTensor":
        return SparseTensor(self.dims, self.indices[rows], self.values[rows])

    def __len__(self):
        return self.nnz

    def __repr__(self):
        return f"SparseTensor(dims={self.dims}, nnz={self.nnz})"


def _find_duplicate(idx: np.ndarray) -> tuple[int, int] | None:
    """Return positions of the first duplicated coordinate pair, if any."""
    if idx.shape[0] < 2:
        return None
    order = np.lexsort(idx.T[::-1])
    s = idx[order]
    same = np.all(s[1:] == s[:-1], axis=1)
    if not same.any():
        return None
    k = int(np.argmax(same))
    a, b = sorted((int(order[k]), int(order[k + 1])))
    return a, b


def load_coo(path, one_based: bool = False, order: int | None = None) -> SparseTensor:
    """Read a whitespace-separated COO text file.

    Each data line holds N integer coordinates followed by one value. Lines
    starting with ``#`` are comments, except an optional ``# dims: I1 ... IN``
    header which fixes the shape. Without a header dims are inferred as the
    per-mode max coordinate plus one. ``order`` is only needed to read a file
    with no data lines and no header.
    """
    path = Path(path)
    dims = None
    coords: list[list[int]] = []
    values: list[float] = []
    lines: list[int] = []
    with path.open() as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.lower().startswith("dims:"):
                    try:
                        dims = tuple(int(tok) for tok in body[5:].split())
                    except ValueError:
                        raise TensorFormatError(f"{path}:{lineno}: malformed dims header") from None
                continue
            toks = line.split()
            n = order if order is not None else (len(dims) if dims else len(toks) - 1)
            if order is None and dims is None and not coords:
                order = n
            if len(toks) != n + 1 or n < 1:
                raise TensorFormatError(
                    f"{path}:{lineno}: expected {n} coordinates and a value, got {len(toks)} fields"
                )
            try:
                c = [int(tok) for tok in toks[:n]]
                v = float(toks[n])
            except ValueError:
                raise TensorFormatError(f"{path}:{lineno}: cannot parse {line!r}") from None
            if one_based:
                c = [x - 1 for x in c]
            if min(c) < 0:
                raise TensorFormatError(f"{path}:{lineno}: negative coordinate")
            coords.append(c)
            values.append(v)
            lines.append(lineno)

    if order is None:
        order = len(dims) if dims else None
    if order is None:
        raise TensorFormatError(f"{path}: no data lines and no dims header; cannot infer order")
    idx = np.array(coords, dtype=np.int64).reshape(-1, order)
    if dims is not None:
        if len(dims) != order:
            raise TensorFormatError(f"{path}: dims header has {len(dims)} modes, data has {order}")
        if idx.size:
            bad = np.nonzero(np.any(idx >= np.array(dims), axis=1))[0]
            if bad.size:
                raise TensorFormatError(
                    f"{path}:{lines[bad[0]]}: coordinate {tuple(idx[bad[0]])} outside dims {dims}"
                )
    else:
        dims = tuple(int(x) + 1 for x in idx.max(axis=0)) if idx.size else (1,) * order
    dup = _find_duplicate(idx)
    if dup is not None:
        raise TensorFormatError(
            f"{path}: duplicate coordinate {tuple(idx[dup[0]])} on lines {lines[dup[0]]} and {lines[dup[1]]}"
        )
    return SparseTensor(dims, idx, np.array(values, dtype=np.float64))


def load_indices(path, order: int, one_based: bool = False) -> np.ndarray:
    """Read query coordinates: N integers per line, optionally followed by a
    value which is ignored. Repeats are allowed. Returns an ``(k, N)`` array."""
    path = Path(path)
    out: list[list[int]] = []
    with path.open() as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            toks = line.split()
            if len(toks) not in (order, order + 1):
                raise TensorFormatError(
                    f"{path}:{lineno}: expected {order} coordinates (and optionally a value), got {len(toks)} fields"
                )
            try:
                c = [int(tok) for tok in toks[:order]]
            except ValueError:
                raise TensorFormatError(f"{path}:{lineno}: cannot parse {line!r}") from None
            out.append([x - 1 for x in c] if one_based else c)
    return np.array(out, dtype=np.int64).reshape(-1, order)


def save_coo(tensor: SparseTensor, path, one_based: bool = False) -> None:
    """Write ``tensor`` with a dims header; values use shortest round-trip repr."""
    shift = 1 if one_based else 0
    with Path(path).open("w") as fh:
        fh.write("# dims: " + " ".join(str(d) for d in tensor.dims) + "\n")
        for c, v in zip(tensor.indices.tolist(), tensor.values.tolist()):
            fh.write(" ".join(str(x + shift) for x in c) + " " + repr(v) + "\n")


@dataclass(frozen=True, eq=False)
class ModeIndex:
    """Inverted index from each mode's slice index to its observed entries.

    For mode ``n``, ``rows[n]`` lists the slice indices that have at least one
    observed entry (ascending), and entries of ``rows[n][r]`` are
    ``perm[n][ptr[n][r]:ptr[n][r + 1]]``. Empty slices are not stored, so the
    index stays O(nnz) even for huge dims.
    """

    dims: tuple[int, ...]
    rows: tuple[np.ndarray, ...]
    ptr: tuple[np.ndarray, ...]
    perm: tuple[np.ndarray, ...]

    def bucket(self, n: int, i: int) -> np.ndarray:
        r = np.searchsorted(self.rows[n], i)
        if r < self.rows[n].shape[0] and self.rows[n][r] == i:
            return self.perm[n][self.ptr[n][r]:self.ptr[n][r + 1]]
        return self.perm[n][:0]

    def bucket_sizes(self, n: int) -> np.ndarray:
        """Dense length-I_n array of bucket sizes."""
        sizes = np.zeros(self.dims[n], dtype=np.int64)
        sizes[self.rows[n]] = np.diff(self.ptr[n])
        return sizes


def build_mode_index(t: SparseTensor) -> ModeIndex:
    rows, ptrs, perms = [], [], []
    for n in range(t.order):
        col = t.indices[:, n]
        perm = np.argsort(col, kind="stable").astype(np.int64)
        sorted_col = col[perm]
        uniq, starts = np.unique(sorted_col, return_index=True)
        ptr = np.append(starts, t.nnz).astype(np.int64)
        rows.append(uniq.astype(np.int64))
        ptrs.append(ptr)
        perms.append(perm)
    return ModeIndex(t.dims, tuple(rows), tuple(ptrs), tuple(perms))


def split_train_test(t: SparseTensor, test_fraction: float, seed=None) -> tuple[SparseTensor, SparseTensor]:
    """Randomly partition the observed entries into train and test sets."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    n_test = int(math.floor(test_fraction * t.nnz + 0.5))
    if n_test == 0 or n_test == t.nnz:
        raise ValueError(f"test_fraction={test_fraction} on {t.nnz} entries leaves an empty split")
    perm = np.random.default_rng(seed).permutation(t.nnz)
    test_rows = np.sort(perm[:n_test])
    train_rows = np.sort(perm[n_test:])
    return t.subset(train_rows), t.subset(test_rows)


def _sample_coordinates(dims: Sequence[int], nnz: int, rng: np.random.Generator) -> np.ndarray:
    total = math.prod(dims)
    if nnz > total:
        raise ValueError(f"cannot sample {nnz} distinct coordinates from {total} cells")
    if nnz == 0:
        return np.zeros((0, len(dims)), dtype=np.int64)
    if 2 * nnz > total:
        lin = rng.permutation(total)[:nnz]
        return np.stack(np.unravel_index(np.sort(lin), dims), axis=1).astype(np.int64)
    # rejection sampling; fresh batches until enough distinct coordinates
    seen: set = set()
    out = []
    hi = np.array(dims, dtype=np.int64)
    while len(out) < nnz:
        need = nnz - len(out)
        batch = rng.integers(0, hi, size=(need + need // 4 + 16, len(dims)), dtype=np.int64)
        for row in map(tuple, batch.tolist()):
            if row not in seen:
                seen.add(row)
                out.append(row)
                if len(out) == nnz:
                    break
    idx = np.array(out, dtype=np.int64)
    return idx[np.lexsort(idx.T[::-1])]


def gen_synthetic(order: int, dims, ranks, factor_density: float = 1.0, noise_std: float = 0.0,
                  nnz: int = 1000, seed=None):
    """Draw a random Tucker model and sample ``nnz`` noisy entries from it.

    Core and factors are uniform in [0, 1); each factor element is then kept
    with probability ``factor_density`` (the core stays dense). Returns
    ``(tensor, truth)`` where ``truth`` is a :class:`~sparsetuck.model.TuckerModel`.
    """
    from .model import TuckerModel, reconstruct_many

    dims = _expand(dims, order, "dims")
    ranks = _expand(ranks, order, "ranks")
    if any(r > d for r, d in zip(ranks, dims)):
        raise ValueError(f"ranks {ranks} exceed dims {dims}")
    if not 0.0 < factor_density <= 1.0:
        raise ValueError("factor_density must lie in (0, 1]")
    if noise_std < 0:
        raise ValueError("noise_std must be non-negative")
    rng = np.random.default_rng(seed)
    # factors before core, so a model initialized from the same seed differs
    factors = []
    for d, r in zip(dims, ranks):
        a = rng.random((d, r))
        if factor_density < 1.0:
            a[rng.random((d, r)) >= factor_density] = 0.0
        factors.append(a)
    core = rng.random(ranks)
    truth = TuckerModel.from_arrays(core, factors)
    idx = _sample_coordinates(dims, nnz, rng)
    vals = reconstruct_many(truth, idx)
    if noise_std > 0:
        vals = vals + rng.normal(0.0, noise_std, size=vals.shape)
    return SparseTensor(dims, idx, vals), truth


def _expand(v, order: int, name: str) -> tuple[int, ...]:
    if np.isscalar(v):
        return (int(v),) * order
    v = tuple(int(x) for x in v)
    if len(v) != order:
        raise ValueError(f"{name} has {len(v)} entries, expected {order}")
    return v
