"""Command line front end for the benchmark drivers.

Subcommands mirror :mod:`wkbmc.harness`: the four case-study tables,
the cost sweep, the invariant self test, the variance blow-up demo,
and the two calibration helpers.  Tables and bench print CSV in the
shared schema; every run is reproducible from (config, seed, samples).
"""
from __future__ import annotations

import argparse
import sys

from . import bermudan as brm
from . import harness, lmm

__all__ = ["main", "build_parser"]


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", metavar="PATH", help="model config file (default: built-in case study)")
    p.add_argument("--seed", type=int, default=None, metavar="N",
                   help="evaluation seed (subcommands pick their usual one when omitted)")
    p.add_argument("--samples", type=int, default=None, metavar="M",
                   help="Monte Carlo sample count (default depends on the subcommand)")
    p.add_argument("--level", choices=("lgn", "0", "1", "euler"), default=None,
                   help="restrict to one estimator variant (default: all)")
    p.add_argument("--out", metavar="PATH", help="also write the output to this file")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    p = argparse.ArgumentParser(
        prog="wkbmc",
        description="swaption pricing benchmarks for the short-time-density estimators",
    )
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("table", parents=[common],
                       help="one benchmark table as CSV (maturity sweep x estimators)")
    t.add_argument("which", type=int, choices=(1, 2, 3, 4),
                   help="1 European prices, 2 European deltas, 3 Bermudan prices, 4 Bermudan deltas")
    t.add_argument("--h", type=float, default=harness.DEFAULT_H,
                   help="finite-difference bump size for the delta tables")

    b = sub.add_parser("bench", parents=[common],
                       help="wall-clock cost of each estimator across maturities")
    b.add_argument("--estimators", default="european,bermudan",
                   help="comma list among european,bermudan")
    b.add_argument("--repeats", type=int, default=2,
                   help="timed repetitions per cell (minimum is reported)")

    sub.add_parser("selftest", parents=[common],
                   help="run every module's cheap invariants; exit 1 on any failure")

    sub.add_parser("explosion-demo", parents=[common],
                   help="closed-form variance blow-up of the fixed-sampler delta")

    sub.add_parser("calibrate-n", parents=[common],
                   help="fit rate count and payoff style to the benchmark European prices")

    cp = sub.add_parser("calibrate-policy", parents=[common],
                        help="fit exercise thresholds on dedicated paths and save them")
    cp.add_argument("--t1", type=float, default=1.0, help="first tenor date in years")

    return p


def _raw(args) -> dict | None:
    return lmm.load_config(args.config) if args.config else None


def _levels(args):
    return (args.level,) if args.level else harness.LEVELS


def _seed(args, default: int) -> int:
    return args.seed if args.seed is not None else default


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "table":
        text = harness.run_table(
            args.which,
            raw=_raw(args),
            m=args.samples or harness.DEFAULT_SAMPLES,
            seed=_seed(args, harness.DEFAULT_SEED),
            h=args.h,
            levels=_levels(args),
            out=args.out,
        )
        sys.stdout.write(text)
        return 0

    if args.command == "bench":
        text = harness.run_bench(
            raw=_raw(args),
            m=args.samples or 20_000,
            seed=_seed(args, harness.DEFAULT_SEED),
            estimators=tuple(s for s in args.estimators.split(",") if s),
            repeats=args.repeats,
            out=args.out,
        )
        sys.stdout.write(text)
        return 0

    if args.command == "selftest":
        text, failed = harness.run_selftest(
            raw=_raw(args), seed=_seed(args, 0), out=args.out
        )
        sys.stdout.write(text)
        return 1 if failed else 0

    if args.command == "explosion-demo":
        text = harness.run_explosion(
            m=args.samples or 100_000, seed=_seed(args, 0), out=args.out
        )
        sys.stdout.write(text)
        return 0

    if args.command == "calibrate-n":
        _, report = harness.calibrate_n(
            raw=_raw(args),
            m=args.samples or harness.DEFAULT_SAMPLES,
            seed=_seed(args, harness.DEFAULT_SEED),
            out=args.out,
        )
        sys.stdout.write(report)
        if args.out:
            sys.stdout.write(f"config written to {args.out}\n")
        return 0

    if args.command == "calibrate-policy":
        cfg = harness.build_config(_raw(args), args.t1)
        policy = brm.calibrate_policy(
            cfg,
            n_paths=args.samples or harness.CALIBRATION_PATHS,
            seed=_seed(args, harness.CALIBRATION_SEED),
        )
        lines = ["date threshold objective_bp"]
        for k, (d, thr) in enumerate(zip(policy.dates, policy.thresholds)):
            obj = policy.objectives[k] * 1e4 if policy.objectives is not None else float("nan")
            lines.append(f"{d:g} {thr:.6e} {obj:.2f}")
        sys.stdout.write("\n".join(lines) + "\n")
        if args.out:
            brm.save_policy(policy, args.out)
            sys.stdout.write(f"policy written to {args.out}\n")
        return 0

    raise AssertionError(f"unhandled command {args.command!r}")
