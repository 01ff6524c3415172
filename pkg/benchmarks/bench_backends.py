"""Compare the compiled and numpy kernel backends, kernel by kernel and per fit iteration.

    python3 benchmarks/bench_backends.py [--nnz 10000,100000] [--reps 5] [--output bench.csv]

Each row reports the median wall time of one kernel call (or one fit
iteration) for both backends and the python/cython ratio.
"""
import argparse
import csv
import statistics
import sys
import time

import numpy as np

from sparsetuck import _backend
from sparsetuck.model import init_random, residuals
from sparsetuck.tensor import build_mode_index, gen_synthetic
from sparsetuck.trainer import TrainConfig, fit


def _median_time(fn, reps):
    fn()  # warm-up
    out = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return statistics.median(out)


def kernel_cases(t, m, idx):
    ranks = np.array(m.ranks, dtype=np.int64)
    G = m.core.size
    resid = residuals(m, t)

    def make(k):
        def recon():
            k.reconstruct(t.indices, m.core_flat, m.core_index, m.factor_buffer, m.offsets, ranks,
                          np.empty(t.nnz), 1)

        def sweep(exact):
            def run():
                # work on a copy so every repetition sees the same input
                fac = m.factor_buffer.copy()
                k.factor_sweep(0, t.indices, t.values, idx.rows[0], idx.ptr[0], idx.perm[0], m.core_flat,
                               m.core_index, fac, m.offsets, ranks, m.factor_mask_buffer, 0.01, False,
                               exact, 1, 1)
            return run

        def gram():
            k.core_gram(t.indices, t.values, m.core_index, m.factor_buffer, m.offsets, ranks,
                        np.empty((G, G)), np.empty(G), 1)

        def csweep():
            k.core_sweep(t.indices, resid.copy(), m.core_flat.copy(), m.core_index,
                         np.zeros(G, dtype=np.uint8), m.factor_buffer, m.offsets, ranks, 0.01, False)

        def cresp():
            k.core_resp(t.indices, resid, m.core_flat, m.core_index, m.factor_buffer, m.offsets, ranks,
                        np.empty(G), 1)

        def fresp():
            k.factor_resp(0, t.indices, resid, idx.rows[0], idx.ptr[0], idx.perm[0], m.core_flat, m.core_index,
                          m.factor_buffer, m.offsets, ranks, np.empty(m.factors[0].size), 1)

        return {"reconstruct": recon, "factor_sweep_cd": sweep(False), "factor_sweep_block": sweep(True),
                "core_gram": gram, "core_sweep": csweep, "core_resp": cresp, "factor_resp": fresp}

    return make


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--nnz", default="10000,100000")
    p.add_argument("--dims", type=int, default=1000)
    p.add_argument("--ranks", type=int, default=3)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--iters", type=int, default=3)
    p.add_argument("--output", default=None)
    args = p.parse_args(argv)

    backends = _backend.available()
    if "cython" not in backends:
        print("compiled backend not built; only the numpy backend is available", file=sys.stderr)
    rows = []
    for nnz in (int(x) for x in args.nnz.split(",")):
        t, _ = gen_synthetic(3, args.dims, args.ranks, nnz=nnz, seed=0)
        m = init_random(t.dims, (args.ranks,) * 3, seed=1)
        idx = build_mode_index(t)
        make = kernel_cases(t, m, idx)
        timings = {be: {} for be in backends}
        for be in backends:
            for name, fn in make(_backend.get(be)).items():
                timings[be][name] = _median_time(fn, args.reps)
            cfg = TrainConfig(ranks=(args.ranks,) * 3, mode="manual", sparsity=0.9, max_iters=args.iters,
                              tol=0.0, backend=be)

            def one_fit():
                _, rep = fit(t, cfg)
                return rep
            one_fit()
            per_iter = []
            for _ in range(args.reps):
                rep = one_fit()
                per_iter.append(sum(r.seconds for r in rep.records) / rep.iterations)
            timings[be]["fit_iteration"] = statistics.median(per_iter)
        for name in timings[backends[0]]:
            row = {"nnz": nnz, "kernel": name}
            for be in backends:
                row[f"{be}_s"] = timings[be][name]
            if len(backends) == 2:
                row["python_over_cython"] = timings["python"][name] / timings["cython"][name]
            rows.append(row)

    fields = list(rows[0].keys())
    fh = open(args.output, "w", newline="") if args.output else sys.stdout
    w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in r.items()})
    if args.output:
        fh.close()


if __name__ == "__main__":
    main()
