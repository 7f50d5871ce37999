"""Command-line entry point.

Subcommands:

* ``train``         -- run the experiment grid described by a config file
* ``accountant``    -- calibrate a noise multiplier for a budget
* ``bench``         -- check power-iteration cost against the flop model
* ``project-error`` -- projection-error sweep tables
* ``report``        -- summarize previously written metrics files

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import sys

from . import harness


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gep",
        description="Differentially private training with anchor-subspace gradient releases.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run experiments from a config file")
    p_train.add_argument("--config", required=True, help="path to a run config")
    p_train.add_argument("--seed", type=int, default=None, help="override the seed list")
    p_train.add_argument("--out", default=None, help="override the output directory")
    p_train.add_argument("--method", default=None, help="override the method list")

    p_acct = sub.add_parser("accountant", help="calibrate a noise multiplier")
    p_acct.add_argument("--eps", type=float, required=True)
    p_acct.add_argument("--delta", type=float, required=True)
    p_acct.add_argument("--steps", type=int, required=True)
    p_acct.add_argument("--q", type=float, default=1.0, help="sampling rate (search mode)")
    p_acct.add_argument("--mode", choices=("closed", "search"), default="closed")

    p_bench = sub.add_parser("bench", help="power-iteration cost model check")
    p_bench.add_argument("--m", type=int, default=100)
    p_bench.add_argument("--k", type=int, default=20)
    p_bench.add_argument("--p", type=int, default=1000)
    p_bench.add_argument(
        "--groups", type=int, nargs="+", default=[1, 2, 5], help="group counts to test"
    )

    p_proj = sub.add_parser("project-error", help="projection-error sweep tables")
    p_proj.add_argument("--seed", type=int, default=0)
    p_proj.add_argument("--k", type=int, nargs="+", default=[2, 5, 10, 20, 40])
    p_proj.add_argument("--n", type=int, default=400)
    p_proj.add_argument("--input-dim", type=int, default=199)
    p_proj.add_argument("--m", type=int, default=100)
    p_proj.add_argument("--task", choices=("mixture", "lowrank"), default="mixture")

    p_report = sub.add_parser("report", help="summarize metrics files")
    p_report.add_argument("--out", required=True, help="directory holding metrics files")

    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "train":
        return harness.train_command(
            args.config, seed=args.seed, out=args.out, method=args.method
        )
    if args.command == "accountant":
        return harness.accountant_command(
            args.eps, args.delta, args.steps, q=args.q, mode=args.mode
        )
    if args.command == "bench":
        return harness.bench_command(
            m=args.m, k=args.k, p=args.p, groups=tuple(args.groups)
        )
    if args.command == "project-error":
        return harness.project_error_command(
            seed=args.seed,
            ks=tuple(args.k),
            n=args.n,
            input_dim=args.input_dim,
            m_aux=args.m,
            task_kind=args.task,
        )
    if args.command == "report":
        return harness.report_command(args.out)
    raise AssertionError(f"unhandled command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
