"""Responsibility scores, responsibility-ordered pruning and stop control."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .model import ResponsibilityTable, TuckerModel, re_from_residuals, residuals
from .tensor import ModeIndex, SparseTensor

# guards floor(pr * size) against products like 0.29 * 100 = 28.999999999999996
_COUNT_EPS = 1e-9


@dataclass
class PruneSchedule:
    """Annealed pruning rate ``min(init_pr * t, max_pr)`` for iteration t >= 1."""

    init_pr: float = 0.01
    max_pr: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.init_pr <= self.max_pr < 1.0:
            raise ValueError("need 0 < init_pr <= max_pr < 1")

    def rate(self, iteration: int) -> float:
        return min(self.init_pr * iteration, self.max_pr)


@dataclass
class StopController:
    """Decides whether pruning continues.

    ``manual`` mode prunes while the model sparsity is below ``target``.
    ``auto`` mode prunes until the RE curve bends upward: the second
    difference ``(RE_t + RE_{t-2} - 2 RE_{t-1}) / pr_t`` exceeds
    ``elbow_threshold`` while RE is rising. Once pruning stops it never resumes.
    """

    mode: str = "manual"
    target: float = 0.0
    elbow_threshold: float = 0.05
    stopped: bool = False
    elbow_stat: float | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.mode not in ("manual", "auto"):
            raise ValueError(f"mode must be 'manual' or 'auto', got {self.mode!r}")
        if not 0.0 <= self.target < 1.0:
            raise ValueError("target sparsity must lie in [0, 1)")


def elbow_statistic(history) -> float | None:
    """Scaled second difference of the last three (RE, pr) samples."""
    if len(history) < 3:
        return None
    (re2, _), (re1, _), (re0, pr0) = history[-3:]
    if pr0 <= 0:
        return None
    return (re0 + re2 - 2.0 * re1) / pr0


def should_prune(ctrl: StopController, current_sparsity: float, re_history=()) -> bool:
    """Whether to prune at this iteration; latches to False once it stops.

    ``re_history`` holds (RE_t, pr_t) pairs recorded after prune events; it is
    only consulted in auto mode.
    """
    if ctrl.stopped:
        return False
    if ctrl.mode == "manual":
        keep = current_sparsity < ctrl.target
    else:
        stat = elbow_statistic(list(re_history))
        ctrl.elbow_stat = stat
        rising = len(re_history) >= 2 and re_history[-1][0] > re_history[-2][0]
        keep = not (stat is not None and stat > ctrl.elbow_threshold and rising)
    if not keep:
        ctrl.stopped = True
    return keep


def _resp_from_delta(delta_sq: np.ndarray, re: float, norm: float) -> np.ndarray:
    """Resp = (RE(e) - RE) / RE given the change in squared residual sum."""
    if re == 0.0:
        return np.full(delta_sq.shape, np.inf)
    re2 = re * re
    re_e2 = np.maximum(re2 + delta_sq / (norm * norm), 0.0)
    re_e = np.sqrt(re_e2)
    # (RE(e)^2 - RE^2) / ((RE(e) + RE) RE), stable for tiny differences
    return (re_e2 - re2) / ((re_e + re) * re)


def compute_core_responsibilities(m: TuckerModel, t: SparseTensor, resid: np.ndarray,
                                  threads: int = 1, backend=None) -> np.ndarray:
    """Responsibility of each core element (array with the core's shape).

    The residual error with element g zeroed uses
    sum_a (r_a + g P_a)^2 = sum_a r_a^2 + sum_a (2 r_a + g P_a) g P_a.
    """
    k = _backend.get(backend)
    out = np.empty(m.core.size)
    k.core_resp(t.indices, np.ascontiguousarray(resid), m.core_flat, m.core_index, m.factor_buffer,
                m.offsets, np.array(m.ranks, dtype=np.int64), out, int(threads))
    re = re_from_residuals(resid, t.norm)
    return _resp_from_delta(out, re, t.norm).reshape(m.ranks)


def compute_factor_responsibilities(m: TuckerModel, t: SparseTensor, idx: ModeIndex, n: int,
                                    resid: np.ndarray, threads: int = 1, backend=None) -> np.ndarray:
    """Responsibility of each element of factor ``n`` (shape I_n x J_n)."""
    k = _backend.get(backend)
    out = np.empty(m.dims[n] * m.ranks[n])
    k.factor_resp(n, t.indices, np.ascontiguousarray(resid), idx.rows[n], idx.ptr[n], idx.perm[n],
                  m.core_flat, m.core_index, m.factor_buffer, m.offsets,
                  np.array(m.ranks, dtype=np.int64), out, int(threads))
    re = re_from_residuals(resid, t.norm)
    return _resp_from_delta(out, re, t.norm).reshape(m.dims[n], m.ranks[n])


def compute_responsibilities(m: TuckerModel, t: SparseTensor, idx: ModeIndex,
                             resid: np.ndarray | None = None, threads: int = 1,
                             backend=None) -> ResponsibilityTable:
    if resid is None:
        resid = residuals(m, t, threads, backend)
    return ResponsibilityTable(
        residuals=resid,
        core_resp=compute_core_responsibilities(m, t, resid, threads, backend),
        factor_resp=[compute_factor_responsibilities(m, t, idx, n, resid, threads, backend)
                     for n in range(m.order)],
        base_re=re_from_residuals(resid, t.norm),
    )


def prune_count(pr: float, size: int) -> int:
    return int(math.floor(pr * size + _COUNT_EPS))


def _prune_array(values: np.ndarray, mask: np.ndarray, resp: np.ndarray, pr: float) -> int:
    """Mask the floor(pr * size) unmasked elements of lowest responsibility."""
    k = prune_count(pr, values.size)
    if k <= 0:
        return 0
    flat_mask = mask.reshape(-1)
    cand = np.flatnonzero(~flat_mask)
    if cand.size == 0:
        return 0
    # stable sort keeps linear-index order among equal responsibilities
    chosen = cand[np.argsort(resp.reshape(-1)[cand], kind="stable")[:k]]
    flat_mask[chosen] = True
    values.reshape(-1)[chosen] = 0.0
    return int(chosen.size)


def prune_step(m: TuckerModel, resp: ResponsibilityTable, pr: float) -> dict:
    """Prune the core and each factor independently; returns new-mask counts."""
    if pr < 0:
        raise ValueError("pruning rate must be non-negative")
    counts = {"core": _prune_array(m.core, m.core_mask, resp.core_resp, pr), "factors": []}
    for n in range(m.order):
        counts["factors"].append(_prune_array(m.factors[n], m.factor_masks[n], resp.factor_resp[n], pr))
    return counts
