"""Command-line entry point (``ksubset`` / ``python -m ksubset``).

Exit status: 0 on success, 1 on invalid input, 2 on an internal failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import inference as inf
from .estimators import ESTIMATORS
from .experiments import (
    SyntheticConfig,
    generate_sparse_problem,
    reports_to_csv,
    reports_to_json,
    run_sparse_regression,
    run_synthetic,
    trace_to_csv,
)
from .sampling import gumbel_noise, make_rng, pam_topk, sample_exact, sample_exact_dc
from .selfcheck import run_selfcheck

log = logging.getLogger("ksubset")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _read_problem(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"input: cannot read {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"input: malformed JSON in {path}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise UsageError("input: expected a JSON object with 'theta' and 'k'")
    theta = data.get("theta")
    if not isinstance(theta, list) or not theta or not all(
        isinstance(x, (int, float)) and not isinstance(x, bool) for x in theta
    ):
        raise UsageError("theta: expected a non-empty list of numbers")
    k = data.get("k")
    if not isinstance(k, int) or isinstance(k, bool):
        raise UsageError("k: expected an integer")
    if not 0 <= k <= len(theta):
        raise UsageError(f"k: must satisfy 0 <= k <= n={len(theta)}, got {k}")
    if not all(math.isfinite(x) for x in theta):
        raise UsageError("theta: all logits must be finite")
    return inf.KSubsetParams(theta, k)


def _write(text, out):
    if out is None:
        sys.stdout.write(text)
        return
    try:
        Path(out).write_text(text)
    except OSError as exc:
        raise UsageError(f"out: cannot write {out}: {exc.strerror}") from exc


def marginals_summary(params: inf.KSubsetParams) -> dict:
    log_pr, _ = inf.pr_exactly_k(params)
    return {
        "n": params.n,
        "k": params.k,
        "log_pr": log_pr,
        "pr": math.exp(log_pr),
        "mu": inf.conditional_marginals(params).tolist(),
        "entropy": inf.entropy(params),
        "kl": inf.kl_to_uniform(params),
    }


def cmd_marginals(args):
    params = _read_problem(args.input)
    _write(json.dumps(marginals_summary(params)) + "\n", args.out)


def cmd_sample(args):
    params = _read_problem(args.input)
    if args.count < 1:
        raise UsageError("count: must be at least 1")
    rng = make_rng(args.seed)
    if args.method == "exact":
        masks = sample_exact(params, rng, size=args.count)
    elif args.method == "dc":
        masks = sample_exact_dc(params, rng, size=args.count)
    else:
        masks = pam_topk(params, gumbel_noise(params.n, rng, size=args.count))
    lines = ["".join("1" if b else "0" for b in row) for row in masks.astype(bool)]
    _write("\n".join(lines) + "\n", args.out)


def _positive(name, value):
    if not value > 0:
        raise UsageError(f"{name}: must be positive, got {value}")


def cmd_bench_synthetic(args):
    names = [s.strip() for s in args.estimators.split(",") if s.strip()]
    if not names:
        raise UsageError("estimators: empty list")
    for name in names:
        if name not in ESTIMATORS:
            raise UsageError(f"estimators: unknown estimator {name!r}")
    if args.n < 1:
        raise UsageError("n: must be at least 1")
    if not 0 <= args.k <= args.n:
        raise UsageError(f"k: must satisfy 0 <= k <= n={args.n}, got {args.k}")
    if "st-gumbel" in names and args.k != 1:
        raise UsageError("estimators: st-gumbel requires k=1")
    if args.samples < 2:
        raise UsageError("samples: must be at least 2")
    if math.comb(args.n, args.k) > inf.ENUMERATION_LIMIT:
        raise UsageError(f"n: C({args.n}, {args.k}) subsets is too many to enumerate")
    for name in ("imle_lambda", "softsub_t", "st_t", "noise_scale"):
        _positive(name.replace("_", "-"), getattr(args, name))
    if args.threads is not None and args.threads < 1:
        raise UsageError("threads: must be at least 1")
    hyper = {
        "imle": {"lam": args.imle_lambda, "noise_scale": args.noise_scale},
        "simple-f": {"lam": args.imle_lambda},
        "simple-b": {"noise_scale": args.noise_scale},
        "softsub": {"t": args.softsub_t},
        "st-gumbel": {"t": args.st_t},
    }
    config = SyntheticConfig(
        n=args.n,
        k=args.k,
        num_estimates=args.samples,
        master_seed=args.seed,
        estimators=[(name, hyper.get(name, {})) for name in names],
        target_seed=args.target_seed,
        theta_seed=args.theta_seed,
        threads=args.threads,
    )
    reports = run_synthetic(config)
    render = reports_to_csv if args.format == "csv" else reports_to_json
    _write(render(reports, timing=args.timing), args.out)


def cmd_sparse_regress(args):
    if not args.m > args.n >= args.k >= 1:
        raise UsageError(f"k: need m > n >= k >= 1, got m={args.m}, n={args.n}, k={args.k}")
    if args.sigma < 0:
        raise UsageError("sigma: must be nonnegative")
    if not -1.0 / max(args.n - 1, 1) < args.rho < 1.0:
        raise UsageError(f"rho: {args.rho} does not give a valid correlation matrix")
    if args.steps < 1:
        raise UsageError("steps: must be at least 1")
    _positive("lr", args.lr)
    if args.estimator not in ESTIMATORS or args.estimator in ("exact", "st-gumbel"):
        raise UsageError(f"estimator: unsupported estimator {args.estimator!r}")
    problem = generate_sparse_problem(args.n, args.k, args.m, args.sigma, args.rho, args.seed)
    result = run_sparse_regression(
        problem, args.k, args.steps, args.lr, args.estimator, args.seed
    )
    if args.out is not None:
        _write(trace_to_csv(result.trace), args.out)
    summary = {
        "map_subset": np.flatnonzero(result.map_subset).tolist(),
        "planted_subset": np.flatnonzero(problem.support).tolist(),
        "recovered": bool(np.array_equal(result.map_subset, problem.support)),
        "final_rmse": result.final_rmse,
    }
    sys.stdout.write(json.dumps(summary) + "\n")


def cmd_selfcheck(args):
    failures = run_selfcheck(args.instances, args.max_n, args.seed)
    for line in failures:
        print(f"FAIL {line}", file=sys.stderr)
    print(f"selfcheck: {args.instances} instances, {len(failures)} failures")
    return 2 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ksubset", description="k-subset inference and gradient estimators")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("marginals", help="exactly-k probability, marginals, entropy, KL")
    p.add_argument("input", help='JSON file {"theta": [...], "k": K}')
    p.add_argument("--out")
    p.set_defaults(func=cmd_marginals)

    p = sub.add_parser("sample", help="draw k-subsets, one 0/1 mask per line")
    p.add_argument("input", help='JSON file {"theta": [...], "k": K}')
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--method", choices=["exact", "dc", "pam"], default="exact")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("bench-synthetic", help="bias/variance/error of gradient estimators")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--estimators", default="simple,sfe,imle,softsub,simple-f,simple-b")
    p.add_argument("--theta-seed", type=int, help="draw logits from N(0, I) instead of zeros")
    p.add_argument("--target-seed", type=int, help="seed for b (default: --seed)")
    p.add_argument("--imle-lambda", type=float, default=30.0)
    p.add_argument("--softsub-t", type=float, default=0.5)
    p.add_argument("--st-t", type=float, default=1.0)
    p.add_argument("--noise-scale", type=float, default=1.0)
    p.add_argument("--threads", type=int, help="default: KSUBSET_THREADS or CPU count")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument(
        "--timing",
        action="store_true",
        help="record wall_time_ms (makes the output run-dependent)",
    )
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench_synthetic)

    p = sub.add_parser("sparse-regress", help="learn a sparse feature subset")
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--m", type=int, default=200)
    p.add_argument("--rho", type=float, default=0.5)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--estimator", default="simple")
    p.add_argument("--out", help="write the per-step trace as CSV")
    p.set_defaults(func=cmd_sparse_regress)

    p = sub.add_parser("selfcheck", help="compare inference with brute-force enumeration")
    p.add_argument("--instances", type=int, default=50)
    p.add_argument("--max-n", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_selfcheck)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        return args.func(args) or 0
    except UsageError as exc:
        print(f"ksubset: error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        log.exception("internal failure")
        return 2


if __name__ == "__main__":
    sys.exit(main())
