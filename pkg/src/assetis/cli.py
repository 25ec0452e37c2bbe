"""Command-line entry point: ``assetis {pval,curve,synth,bench}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import AssetISError, ConfigurationError
from .fileio import emit_curve, generate_synthetic_expression, write_expression
from .model import StudyDesign
from .scenario import ESTIMATORS, MODES, Scenario, run_scenario

log = logging.getLogger("assetis")

BENCH_THRESHOLDS = [3.63, 4.48, 5.33, 6.18, 7.03, 7.88, 8.73, 9.58]


def parse_grid(spec: str) -> list[float]:
    """``lo:hi:step`` inclusive of both ends."""
    try:
        lo, hi, step = (float(x) for x in spec.split(":"))
    except ValueError:
        raise ConfigurationError(f"b-grid: expected lo:hi:step, got {spec!r}") from None
    if step <= 0 or hi < lo:
        raise ConfigurationError(f"b-grid: need step > 0 and hi >= lo, got {spec!r}")
    n = int(round((hi - lo) / step)) + 1
    return [round(lo + i * step, 10) for i in range(n)]


def parse_b(spec: str) -> list[float]:
    try:
        return [float(x) for x in spec.split(",") if x.strip()]
    except ValueError:
        raise ConfigurationError(f"b: expected comma-separated numbers, got {spec!r}") from None


def parse_estimators(spec: str) -> tuple:
    est = tuple(s.strip() for s in spec.split(",") if s.strip())
    bad = [e for e in est if e not in ESTIMATORS]
    if bad or not est:
        raise ConfigurationError(f"estimators: choose from {ESTIMATORS}, got {spec!r}")
    return est


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=MODES, default="normal-independent")
    p.add_argument("--design", help="study design config (normal modes)")
    p.add_argument("--expr", help="expression CSV (conditional modes)")
    p.add_argument("--maf", type=float, help="minor allele frequency (conditional modes)")
    p.add_argument("--K", type=int, default=50_000, help="IS simulations per batch")
    p.add_argument("--K-mc", type=int, default=None,
                   help="naive MC simulations (default: 100/p from the IS estimate)")
    p.add_argument("--estimators", default="is,dlm", help="comma list from is,mc,dlm")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--ridge", type=float, default=0.0,
                   help="add ridge*I to cell-type correlation blocks (recorded in output)")
    p.add_argument("--out", required=True, help="output prefix; writes <out>.csv and <out>.json")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="assetis", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("pval", help="p-values at one or more thresholds")
    _common(p)
    p.add_argument("--b", required=True, help="threshold(s), comma separated")

    p = sub.add_parser("curve", help="p-value curve over a grid using range mode")
    _common(p)
    p.add_argument("--b-grid", required=True, help="lo:hi:step")
    p.add_argument("--half-width", type=float, default=0.75)
    p.add_argument("--efficiency", action="store_true", help="also emit log10 efficiency")

    p = sub.add_parser("synth", help="write a synthetic standardized expression matrix")
    p.add_argument("--dist", required=True,
                   choices=("normal", "bimodal", "sharp-bimodal", "zero-inflated"))
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--C", type=int, default=7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("bench", help="equal-sample-size independent-study benchmark grid")
    p.add_argument("--M", type=int, nargs="+", default=[7, 10])
    p.add_argument("--K", type=int, default=50_000)
    p.add_argument("--estimators", default="is,dlm")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", required=True, help="output prefix; one record per M")
    return parser


def _scenario(args, b) -> Scenario:
    return Scenario(
        mode=args.mode, b=b, design=args.design, expr=args.expr, maf=args.maf, K=args.K,
        K_mc=args.K_mc, estimators=parse_estimators(args.estimators), seed=args.seed,
        threads=args.threads, ridge=args.ridge, out=args.out,
    )


def run(args) -> int:
    if args.verb == "pval":
        run_scenario(_scenario(args, parse_b(args.b)))
    elif args.verb == "curve":
        sc = _scenario(args, parse_grid(args.b_grid))
        sc.range_mode = True
        sc.half_width = args.half_width
        rec = run_scenario(sc, write=False)
        rec.write(args.out)
        emit_curve(rec, str(Path(args.out)) + "_curve.csv", efficiency=args.efficiency)
    elif args.verb == "synth":
        Y = generate_synthetic_expression(args.dist, args.N, args.C, args.seed)
        write_expression(args.out, Y)
    elif args.verb == "bench":
        est = parse_estimators(args.estimators)
        for M in args.M:
            sc = Scenario(mode="normal-independent", b=BENCH_THRESHOLDS, K=args.K, estimators=est,
                          seed=args.seed, threads=args.threads, out=f"{args.out}_M{M}",
                          study_design=StudyDesign(np.full(M, 1000.0)))
            rec = run_scenario(sc)
            for row in rec.rows:
                log.info("M=%d b=%.2f p_is=%s p_dlm=%s", M, row["b"], row["p_is"], row["p_dlm"])
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(message)s")
    try:
        return run(args)
    except AssetISError as exc:
        print(f"assetis: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
