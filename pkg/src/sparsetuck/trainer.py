"""Outer training loop, prediction and held-out evaluation."""
from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .model import (TuckerModel, init_random, normalize_columns, re_from_residuals,
                    reconstruct_many, residuals, sparsity)
from .pruning import PruneSchedule, StopController, compute_responsibilities, prune_step, should_prune
from .tensor import SparseTensor, build_mode_index
from .updates import REGULARIZERS, SOLVERS, update_all_factors, update_core, update_core_block

logger = logging.getLogger(__name__)


def default_threads() -> int:
    try:
        return max(int(os.environ.get("SPARSETUCK_THREADS", "1")), 1)
    except ValueError:
        return 1


@dataclass
class TrainConfig:
    ranks: tuple
    lam: float = 0.01
    regularizer: str = "lf"
    solver: str = "block"
    inner: int = 100
    mode: str = "manual"
    sparsity: float = 0.0
    elbow_threshold: float = 0.05
    init_pr: float = 0.01
    max_pr: float = 0.1
    max_iters: int = 100
    tol: float = 1e-4
    threads: int = field(default_factory=default_threads)
    seed: int | None = 0
    backend: str | None = None

    def __post_init__(self):
        self.ranks = tuple(int(r) for r in self.ranks)
        if not self.ranks or any(r <= 0 for r in self.ranks):
            raise ValueError(f"ranks must be positive, got {self.ranks}")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.regularizer not in REGULARIZERS:
            raise ValueError(f"regularizer must be one of {REGULARIZERS}")
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")
        # validated by their own constructors
        PruneSchedule(self.init_pr, self.max_pr)
        StopController(self.mode, self.sparsity, self.elbow_threshold)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ranks"] = list(self.ranks)
        return d


@dataclass
class IterationRecord:
    iteration: int
    re: float
    sparsity: float
    masked_fraction: float
    pr: float
    pruned: bool
    pruned_core: int
    pruned_factors: list
    seconds: float
    objective: float


@dataclass
class IterationReport:
    records: list = field(default_factory=list)
    converged: bool = False
    test_re: float | None = None
    final_re: float | None = None
    final_sparsity: float | None = None
    final_masked_fraction: float | None = None
    wall_time: float = 0.0

    @property
    def iterations(self) -> int:
        return len(self.records)

    def re_trace(self) -> np.ndarray:
        return np.array([r.re for r in self.records])

    def sparsity_trace(self) -> np.ndarray:
        return np.array([r.sparsity for r in self.records])

    def summary(self, cfg: TrainConfig | None = None) -> dict:
        out = {
            "final_re": self.final_re,
            "final_test_re": self.test_re,
            "final_sparsity": self.final_sparsity,
            "final_masked_fraction": self.final_masked_fraction,
            "iterations": self.iterations,
            "converged": self.converged,
            "wall_time": self.wall_time,
        }
        if cfg is not None:
            out["config"] = cfg.to_dict()
        return out

    def to_jsonl(self, cfg: TrainConfig | None = None) -> str:
        lines = [json.dumps(asdict(r)) for r in self.records]
        lines.append(json.dumps({"summary": self.summary(cfg)}))
        return "\n".join(lines) + "\n"


def fit(t: SparseTensor, cfg: TrainConfig, test: SparseTensor | None = None,
        model: TuckerModel | None = None, callback=None) -> tuple[TuckerModel, IterationReport]:
    """Alternate factor and core sweeps, pruning by responsibility until the
    stop rule fires, then normalize factor columns.

    Convergence (``|RE_t - RE_{t-1}| < tol``) is only accepted once pruning has
    stopped and the previous iteration did not prune, so a manual target is
    always reached before the loop exits on convergence.

    ``callback(record, model)``, if given, runs at the end of every iteration
    with the live (not yet normalized) model; it must not modify it.
    """
    if t.nnz == 0:
        raise ValueError("cannot fit an empty tensor")
    if t.norm <= 0:
        raise ValueError("input tensor has zero Frobenius norm")
    if len(cfg.ranks) != t.order:
        raise ValueError(f"{len(cfg.ranks)} ranks given for an order-{t.order} tensor")
    t0 = time.perf_counter()
    m = init_random(t.dims, cfg.ranks, cfg.seed) if model is None else model
    idx = build_mode_index(t)
    schedule = PruneSchedule(cfg.init_pr, cfg.max_pr)
    ctrl = StopController(cfg.mode, cfg.sparsity, cfg.elbow_threshold)
    history: list[tuple[float, float]] = []
    report = IterationReport()
    prev_re = None
    pruned_last = False
    any_pruned = False
    kw = dict(threads=cfg.threads, backend=cfg.backend)

    for it in range(1, cfg.max_iters + 1):
        ts = time.perf_counter()
        update_all_factors(m, t, idx, cfg.lam, cfg.regularizer, solver=cfg.solver, inner=cfg.inner, **kw)
        if cfg.solver == "block":
            update_core_block(m, t, cfg.lam, cfg.regularizer, inner=cfg.inner, **kw)
        else:
            update_core(m, t, cfg.lam, cfg.regularizer, **kw)
        # rebuild instead of trusting the incrementally maintained residuals
        resid = residuals(m, t, **kw)
        re = re_from_residuals(resid, t.norm)
        obj = float(np.sum(resid * resid)) + cfg.lam * _penalty(m, cfg.regularizer)
        pr = schedule.rate(it)
        if any_pruned:
            history.append((re, pr))
        # the mask, not incidental zeros, measures progress toward the target: L1 zeros can regrow
        active = (not ctrl.stopped) and re > 0.0 and should_prune(ctrl, m.masked_fraction(), history)
        if re == 0.0:
            ctrl.stopped = True
        counts = {"core": 0, "factors": [0] * m.order}
        if active:
            table = compute_responsibilities(m, t, idx, resid, **kw)
            counts = prune_step(m, table, pr)
            any_pruned = True
        report.records.append(IterationRecord(
            iteration=it, re=re, sparsity=sparsity(m), masked_fraction=m.masked_fraction(),
            pr=pr if active else 0.0, pruned=active, pruned_core=counts["core"],
            pruned_factors=counts["factors"], seconds=time.perf_counter() - ts, objective=obj,
        ))
        logger.debug("iter %d re=%.6g sparsity=%.4f pruned=%s", it, re, report.records[-1].sparsity, active)
        if callback is not None:
            callback(report.records[-1], m)
        if (not active and not pruned_last and prev_re is not None
                and abs(prev_re - re) < cfg.tol):
            report.converged = True
            break
        prev_re = re
        pruned_last = active

    normalize_columns(m)
    report.final_re = re_from_residuals(residuals(m, t, **kw), t.norm)
    report.final_sparsity = sparsity(m)
    report.final_masked_fraction = m.masked_fraction()
    if test is not None:
        report.test_re = evaluate_test(m, test, **kw)
    report.wall_time = time.perf_counter() - t0
    return m, report


def _penalty(m: TuckerModel, regularizer: str) -> float:
    if regularizer == "l1":
        return float(np.sum(np.abs(m.core)) + np.sum(np.abs(m.factor_buffer)))
    return float(np.sum(m.core * m.core) + np.sum(m.factor_buffer * m.factor_buffer))


def predict(m: TuckerModel, queries, threads: int = 1, backend=None) -> np.ndarray:
    """Reconstructed values at each query coordinate, in order."""
    q = np.asarray(queries, dtype=np.int64)
    if q.size == 0:
        return np.zeros(0)
    return reconstruct_many(m, q.reshape(-1, m.order), threads, backend)


def evaluate_test(m: TuckerModel, test: SparseTensor, threads: int = 1, backend=None) -> float:
    """Normalized reconstruction error over the entries of ``test``."""
    if test.nnz == 0:
        raise ValueError("test set is empty")
    if test.norm <= 0:
        raise ValueError("test set has zero Frobenius norm")
    return re_from_residuals(residuals(m, test, threads, backend), test.norm)
