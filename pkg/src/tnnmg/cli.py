"""Command-line entry point: ``tnnmg run --problem obstacle1d --level 6``."""

from __future__ import annotations

import argparse
import inspect
import logging
import sys

from .core import InternalError, NumericError, UsageError
from .driver import SolveConfig, nested_solve, solve
from .linsolve import LinearSolverConfig
from .nonsmooth import DEFAULT_CURVATURE_CAP, DEFAULT_EPS
from .problems import PROBLEMS
from .smoother import SmootherConfig

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_NOT_CONVERGED = 3
EXIT_NUMERIC = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tnnmg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="solve one of the model problems")
    run.add_argument("--problem", required=True, choices=sorted(PROBLEMS))
    run.add_argument("--level", type=int, default=5, help="grid level, 2^level - 1 nodes per direction")
    run.add_argument("--max-iter", type=int, default=200)
    run.add_argument("--tol", type=float, default=1e-10, help="increment tolerance")
    run.add_argument("--eps", type=float, default=DEFAULT_EPS, help="truncation threshold")
    run.add_argument("--curvature-cap", type=float, default=DEFAULT_CURVATURE_CAP)
    run.add_argument("--linear", choices=["vcycle", "cg", "dense"], default="vcycle")
    run.add_argument("--smoother", choices=["exact", "pgs", "model"], default=None,
                     help="local solver (default: chosen per problem)")
    run.add_argument("--cycles", type=int, default=1, help="V-cycles per iteration")
    run.add_argument("--alpha", type=float, default=1e-8, help="smoother regularization")
    run.add_argument("--nested", action="store_true", help="nested iteration from level 1")
    run.add_argument("--seed", type=int, default=0, help="seed for random problem data")
    run.add_argument("--out", default=None, help="CSV file for the iteration history")
    run.add_argument("-v", "--verbose", action="store_true")
    return parser


def _builder(name, seed):
    builder = PROBLEMS[name]
    if "seed" in inspect.signature(builder).parameters:
        return lambda level: builder(level, seed=seed)
    return builder


def _summary(prefix, report):
    return (f"{prefix}iterations={report.iterations} converged={report.converged} "
            f"final_energy={report.final_energy:.17g} rate={report.asymptotic_rate(5):.4g}")


def run(args) -> int:
    cfg = SolveConfig(
        max_iter=args.max_iter,
        tol=args.tol,
        eps=args.eps,
        curvature_cap=args.curvature_cap,
        smoother=SmootherConfig(kind=args.smoother or "auto"),
        linear=LinearSolverConfig(kind=args.linear, cycles=args.cycles, alpha=args.alpha),
    )
    builder = _builder(args.problem, args.seed)
    if args.nested:
        _, reports = nested_solve(builder, args.level, cfg)
        for level, rep in reports:
            print(_summary(f"level={level} ", rep))
        report = reports[-1][1]
    else:
        inst = builder(args.level)
        _, report = solve(inst.functional, inst.initial, cfg, inst.hierarchy)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            report.to_csv(fh)
    print(_summary("", report))
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except UsageError as exc:
        print(f"tnnmg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"tnnmg: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except InternalError as exc:
        print(f"tnnmg: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
