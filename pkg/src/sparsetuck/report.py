"""Metric summaries, factor row-density ranking and scaling benchmarks."""
from __future__ import annotations

import csv
import io
import logging
import math
import statistics
from dataclasses import dataclass

import numpy as np

from .model import TuckerModel, reconstruction_error, sparsity
from .tensor import SparseTensor, gen_synthetic
from .trainer import TrainConfig, fit

logger = logging.getLogger(__name__)


def row_density_report(m: TuckerModel, n: int, top_k: int | None = 10) -> list[tuple[int, int, float]]:
    """Rank rows of factor ``n`` by nonzero count, then by value sum.

    Returns ``(row, nonzero_count, value_sum)`` tuples, densest first. Remaining
    ties go to the lower row index.
    """
    if not 0 <= n < m.order:
        raise IndexError(f"mode {n} out of range for order {m.order}")
    a = m.factors[n]
    counts = np.count_nonzero(a, axis=1)
    sums = a.sum(axis=1)
    order = np.lexsort((np.arange(a.shape[0]), -sums, -counts))
    if top_k is not None:
        order = order[:max(int(top_k), 0)]
    return [(int(i), int(counts[i]), float(sums[i])) for i in order]


def model_summary(m: TuckerModel, t: SparseTensor | None = None, test: SparseTensor | None = None) -> dict:
    """Sparsity and error metrics of a model, as a JSON-ready dict."""
    out = {
        "dims": list(m.dims),
        "ranks": list(m.ranks),
        "sparsity": sparsity(m),
        "masked_fraction": m.masked_fraction(),
        "core_nonzeros": int(np.count_nonzero(m.core)),
        "factor_nonzeros": [int(np.count_nonzero(a)) for a in m.factors],
    }
    if t is not None:
        out["re"] = reconstruction_error(m, t)
    if test is not None:
        out["test_re"] = reconstruction_error(m, test)
    return out


@dataclass
class BenchConfig:
    order: int
    dims: int | tuple
    ranks: int | tuple
    nnz: int

    def label(self) -> str:
        def fmt(v):
            return "x".join(str(x) for x in v) if isinstance(v, (tuple, list)) else str(v)
        return f"order={self.order} dims={fmt(self.dims)} ranks={fmt(self.ranks)} nnz={self.nnz}"


BENCH_FIELDS = ("order", "dims", "ranks", "nnz", "threads", "seconds_per_iter", "speedup", "status")


def _time_fit(t: SparseTensor, ranks, threads: int, iters: int, reps: int, backend, seed) -> float:
    # tol=0 keeps every run at exactly ``iters`` iterations; s=0.9 keeps pruning active
    cfg = TrainConfig(ranks=ranks, lam=0.01, mode="manual", sparsity=0.9, max_iters=iters, tol=0.0,
                      threads=threads, seed=seed, backend=backend)
    fit(t, cfg)  # untimed warm-up: page faults, thread pool start
    per_rep = []
    for _ in range(reps):
        _, rep = fit(t, cfg)
        per_rep.append(sum(r.seconds for r in rep.records) / len(rep.records))
    return statistics.median(per_rep)


def scaling_benchmark(configs, threads_list=(1,), iters: int = 3, reps: int = 5, backend=None,
                      seed: int = 0) -> list[dict]:
    """Median per-iteration fit time for each (config, thread count) cell.

    Data generation is excluded from timing. ``speedup`` is the single-thread
    time of the same config divided by the cell's time. Configs that cannot be
    generated or run (infeasible sizes, out of memory) yield rows with
    ``status`` set to ``skipped: ...``.
    """
    rows = []
    threads_list = [int(x) for x in threads_list]
    for c in configs:
        if not isinstance(c, BenchConfig):
            c = BenchConfig(**c)
        base = dict(order=c.order, dims=_fmt(c.dims), ranks=_fmt(c.ranks), nnz=c.nnz)
        try:
            t, _ = gen_synthetic(c.order, c.dims, c.ranks, nnz=c.nnz, seed=seed)
            ranks = _ranks_tuple(c.ranks, c.order)
            times = {}
            for th in sorted(set(threads_list) | {1}):
                times[th] = _time_fit(t, ranks, th, iters, reps, backend, seed)
        except (MemoryError, ValueError) as e:
            reason = "out of memory" if isinstance(e, MemoryError) else str(e)
            logger.warning("skipping %s: %s", c.label(), reason)
            for th in threads_list:
                rows.append(dict(base, threads=th, seconds_per_iter=math.nan, speedup=math.nan,
                                 status=f"skipped: {reason}"))
            continue
        for th in threads_list:
            rows.append(dict(base, threads=th, seconds_per_iter=times[th], speedup=times[1] / times[th],
                             status="ok"))
    return rows


def _fmt(v) -> str:
    return "x".join(str(int(x)) for x in v) if isinstance(v, (tuple, list)) else str(int(v))


def _ranks_tuple(r, order):
    return tuple(int(x) for x in r) if isinstance(r, (tuple, list)) else (int(r),) * order


def bench_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=BENCH_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: r[k] for k in BENCH_FIELDS})
    return buf.getvalue()
