"""Command-line entry point: ``sparsetuck <command> [options]``."""
from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import _backend
from .model import load_model, reconstruction_error, save_model
from .report import bench_csv, model_summary, row_density_report, scaling_benchmark
from .tensor import TensorFormatError, gen_synthetic, load_coo, load_indices, save_coo
from .trainer import TrainConfig, default_threads, fit, predict
from .updates import SOLVERS

logger = logging.getLogger("sparsetuck")


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _threads(value):
    return value if value is not None else default_threads()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_decompose(args) -> int:
    t = load_coo(args.input, one_based=args.one_based)
    test = load_coo(args.test_input, one_based=args.one_based) if args.test_input else None
    if test is not None and test.order != t.order:
        raise ValueError(f"test tensor has order {test.order}, training tensor {t.order}")
    ranks = args.ranks if len(args.ranks) > 1 else args.ranks * t.order
    cfg = TrainConfig(
        ranks=ranks, lam=args.lam, regularizer=args.reg, solver=args.solver, inner=args.inner, mode=args.mode,
        sparsity=args.sparsity, elbow_threshold=args.elbow_threshold, init_pr=args.init_pr, max_pr=args.max_pr,
        max_iters=args.max_iters, tol=args.tol, threads=_threads(args.threads), seed=args.seed,
        backend=args.backend,
    )
    if test is not None:
        # dims of the two files may differ when inferred; size the model to cover both
        dims = tuple(max(a, b) for a, b in zip(t.dims, test.dims))
        t = type(t)(dims, t.indices, t.values)
    m, report = fit(t, cfg, test=test)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_model(m, out)
    (out / "report.jsonl").write_text(report.to_jsonl(cfg))
    _write_json(out / "summary.json", report.summary(cfg))
    # validate what was written before claiming success
    back = load_model(out)
    if back.dims != m.dims or not (np.array_equal(back.core, m.core)
                                   and all(np.array_equal(a, b) for a, b in zip(back.factors, m.factors))):
        raise RuntimeError(f"model files in {out} do not round-trip")
    logger.info("RE %.6g, sparsity %.4f after %d iterations", report.final_re, report.final_sparsity,
                report.iterations)
    return 0


def cmd_predict(args) -> int:
    m = load_model(args.model_dir)
    q = load_indices(args.queries, m.order, one_based=args.one_based)
    vals = predict(m, q, threads=_threads(args.threads), backend=args.backend)
    text = "".join(repr(float(v)) + "\n" for v in vals)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_evaluate(args) -> int:
    m = load_model(args.model_dir)
    t = load_coo(args.input, one_based=args.one_based) if args.input else None
    test = load_coo(args.test_input, one_based=args.one_based) if args.test_input else None
    for x in (t, test):
        if x is not None and x.order != m.order:
            raise ValueError(f"tensor order {x.order} does not match model order {m.order}")
    out = model_summary(m)
    kw = dict(threads=_threads(args.threads), backend=args.backend)
    if t is not None:
        out["re"] = reconstruction_error(m, t, **kw)
    if test is not None:
        out["test_re"] = reconstruction_error(m, test, **kw)
    sys.stdout.write(json.dumps(out, sort_keys=True) + "\n")
    return 0


def cmd_synth(args) -> int:
    dims = args.dims if len(args.dims) > 1 else args.dims * args.order
    ranks = args.ranks if len(args.ranks) > 1 else args.ranks * args.order
    t, truth = gen_synthetic(args.order, dims, ranks, factor_density=args.density, noise_std=args.noise,
                             nnz=args.nnz, seed=args.seed)
    save_coo(t, args.output, one_based=args.one_based)
    if args.truth_dir:
        save_model(truth, args.truth_dir)
    return 0


def cmd_bench(args) -> int:
    configs = [dict(order=o, dims=d, ranks=args.ranks, nnz=n)
               for o, d, n in itertools.product(args.order, args.dims, args.nnz)]
    rows = scaling_benchmark(configs, args.threads, iters=args.iters, reps=args.reps, backend=args.backend,
                             seed=args.seed)
    text = bench_csv(rows)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_density(args) -> int:
    m = load_model(args.model_dir)
    if not 1 <= args.mode <= m.order:
        raise ValueError(f"--mode must lie in 1..{m.order}")
    rows = row_density_report(m, args.mode - 1, args.top_k)
    out = [{"row": r + (1 if args.one_based else 0), "nonzeros": c, "sum": s} for r, c, s in rows]
    sys.stdout.write(json.dumps(out) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sparsetuck", description="Sparse Tucker factorization with pruning.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="log progress (repeat for debug output)")
    sub = p.add_subparsers(dest="command", required=True)
    # lets -v also follow the subcommand; SUPPRESS keeps it from resetting the top-level count
    verbose = argparse.ArgumentParser(add_help=False)
    verbose.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS,
                         help="log progress (repeat for debug output)")
    d = dict(formatter_class=argparse.ArgumentDefaultsHelpFormatter, parents=[verbose])

    def common(sp, threads=True):
        sp.add_argument("--one-based", action="store_true", help="coordinates in files start at 1")
        sp.add_argument("--backend", choices=_backend.available(), default=None,
                        help=f"kernel backend (default {_backend.DEFAULT})")
        if threads:
            sp.add_argument("--threads", type=int, default=None,
                            help="worker threads (default: $SPARSETUCK_THREADS or 1)")

    s = sub.add_parser("decompose", help="fit a sparse Tucker model", **d)
    s.add_argument("--input", required=True, help="training tensor, COO text")
    s.add_argument("--ranks", type=_int_list, required=True, help="core ranks, comma list or one value for all modes")
    s.add_argument("--reg", choices=("lf", "l1"), default="lf", help="regularizer")
    s.add_argument("--lambda", dest="lam", type=float, default=0.01, help="regularization weight")
    s.add_argument("--mode", choices=("manual", "auto"), default="manual", help="pruning stop rule")
    s.add_argument("--sparsity", type=float, default=0.0, help="target sparsity in manual mode")
    s.add_argument("--elbow-threshold", type=float, default=0.05, help="elbow statistic threshold in auto mode")
    s.add_argument("--init-pr", type=float, default=0.01, help="initial pruning rate")
    s.add_argument("--max-pr", type=float, default=0.1, help="maximum pruning rate")
    s.add_argument("--max-iters", type=int, default=100, help="iteration cap")
    s.add_argument("--tol", type=float, default=1e-4, help="convergence tolerance on |change in RE|")
    s.add_argument("--solver", choices=SOLVERS, default="block",
                   help="block: joint solve per row and over the core; cd: one element pass each")
    s.add_argument("--inner", type=int, default=100, help="max element passes per block solve under l1")
    s.add_argument("--seed", type=int, default=0, help="initialization seed")
    s.add_argument("--test-input", default=None, help="held-out tensor for Test RE")
    s.add_argument("--output-dir", required=True, help="directory for model, report.jsonl and summary.json")
    common(s)
    s.set_defaults(func=cmd_decompose)

    s = sub.add_parser("predict", help="reconstruct values at query coordinates", **d)
    s.add_argument("--model-dir", required=True)
    s.add_argument("--queries", required=True, help="coordinates, one per line; a trailing value is ignored")
    s.add_argument("--output", default=None, help="output file (default stdout)")
    common(s)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("evaluate", help="RE and Test RE of a saved model", **d)
    s.add_argument("--model-dir", required=True)
    s.add_argument("--input", default=None, help="tensor for RE")
    s.add_argument("--test-input", default=None, help="tensor for Test RE")
    common(s)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("synth", help="generate a synthetic tensor and its ground truth", **d)
    s.add_argument("--order", type=int, default=3)
    s.add_argument("--dims", type=_int_list, default=[100], help="comma list or one value for all modes")
    s.add_argument("--ranks", type=_int_list, default=[3], help="comma list or one value for all modes")
    s.add_argument("--density", type=float, default=1.0, help="fraction of nonzero factor elements")
    s.add_argument("--noise", type=float, default=0.0, help="std of additive Gaussian noise")
    s.add_argument("--nnz", type=int, default=1000, help="number of observed entries")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--output", required=True, help="tensor output path")
    s.add_argument("--truth-dir", default=None, help="directory for the ground-truth model")
    s.add_argument("--one-based", action="store_true", help="write coordinates starting at 1")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("bench", help="per-iteration timing over sizes and thread counts", **d)
    s.add_argument("--order", type=_int_list, default=[3], help="tensor orders (comma list)")
    s.add_argument("--dims", type=_int_list, default=[1000], help="per-mode dimensionality values (comma list)")
    s.add_argument("--ranks", type=int, default=3, help="rank for every mode")
    s.add_argument("--nnz", type=_int_list, default=[10000], help="observed entry counts (comma list)")
    s.add_argument("--threads", type=_int_list, default=[1], help="thread counts (comma list)")
    s.add_argument("--iters", type=int, default=3, help="fit iterations per timing")
    s.add_argument("--reps", type=int, default=5, help="repetitions per cell; the median is reported")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--backend", choices=_backend.available(), default=None)
    s.add_argument("--output", default=None, help="CSV output file (default stdout)")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("density", help="rank factor rows by nonzero count", **d)
    s.add_argument("--model-dir", required=True)
    s.add_argument("--mode", type=int, required=True, help="factor to inspect, 1-based")
    s.add_argument("--top-k", type=int, default=10)
    s.add_argument("--one-based", action="store_true", help="report row indices starting at 1")
    s.set_defaults(func=cmd_density)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (TensorFormatError, ValueError, IndexError, OSError, RuntimeError) as e:
        print(f"sparsetuck {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
