"""Command-line driver.

Subcommands:
  run       execute a sweep experiment from a config file and emit CSV
  schedule  generate or inspect pilot schedules (text format)
  validate  check a config file without running anything

Exit codes: 0 success, 1 config error, 2 runtime/numerical error.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .errors import ConfigError, PilotCovError
from .experiment import emit_csv, load_experiment_config, run_experiment
from .scenario import UserGrouping
from .schedule import (
    load_schedule,
    make_random_schedule,
    min_schedule_length,
    rank_and_condition,
    save_schedule,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pilotcov",
        description="Pilot-scheduled covariance estimation experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a sweep experiment")
    run_p.add_argument("config", help="experiment config file (key = value sections)")
    run_p.add_argument("--out", default="results.csv", help="output CSV path")
    run_p.add_argument("--seed-base", type=int, default=None,
                       help="override the RNG seed base")
    run_p.add_argument("--threads", type=int, default=1,
                       help="parallel work units (sweep points x seeds)")
    run_p.add_argument("--timing", action="store_true",
                       help="record wall-clock estimator runtimes; note this "
                            "makes the CSV non-reproducible byte-for-byte")

    sched_p = sub.add_parser("schedule", help="generate or inspect schedules")
    sched_sub = sched_p.add_subparsers(dest="schedule_command", required=True)

    gen_p = sched_sub.add_parser("generate", help="draw a random schedule")
    gen_p.add_argument("--users", type=int, required=True, help="total users K")
    gen_p.add_argument("--pilots", type=int, required=True, help="pilot count Ttr")
    gen_p.add_argument("--length", type=int, default=None,
                       help="allocations per schedule (default: minimum + 2)")
    gen_p.add_argument("--cells", type=int, default=1, help="number of cells")
    gen_p.add_argument("--seed", type=int, default=0)
    gen_p.add_argument("--out", default=None, help="write text format here")

    insp_p = sched_sub.add_parser("inspect", help="report rank and conditioning")
    insp_p.add_argument("file", help="schedule text file")
    insp_p.add_argument("--pilots", type=int, default=None,
                        help="pilot count (default: max index + 1)")

    val_p = sub.add_parser("validate", help="validate a config file")
    val_p.add_argument("config")
    return parser


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = load_experiment_config(args.config)
    if args.seed_base is not None:
        from dataclasses import replace

        cfg = replace(cfg, seed_base=args.seed_base)
    result = run_experiment(cfg, threads=max(1, args.threads),
                            measure_runtime=args.timing)
    emit_csv(result, args.out)
    n_bad = sum(r.status != "ok" for r in result.records)
    print(f"wrote {len(result.records)} records to {args.out}"
          + (f" ({n_bad} unidentifiable)" if n_bad else ""))
    return 0


def _cmd_schedule(args: argparse.Namespace) -> int:
    if args.schedule_command == "generate":
        K, Ttr = args.users, args.pilots
        if K % args.cells != 0:
            raise ConfigError(f"K={K} not divisible by {args.cells} cells")
        N = args.length if args.length is not None else min_schedule_length(K, Ttr) + 2
        grouping = UserGrouping.contiguous(args.cells, K // args.cells)
        schedule = make_random_schedule(
            K, Ttr, N, grouping, np.random.default_rng(args.seed)
        )
        rank, cond = rank_and_condition(schedule)
        print(f"K={K} Ttr={Ttr} N={N} rank={rank} condition={cond:.6g}")
        if args.out:
            save_schedule(schedule, args.out)
            print(f"wrote {args.out}")
        return 0

    schedule = load_schedule(args.file, Ttr=args.pilots)
    rank, cond = rank_and_condition(schedule)
    full = "yes" if rank == schedule.K else "NO"
    print(f"K={schedule.K} Ttr={schedule.Ttr} N={schedule.N}")
    print(f"rank={rank} condition={cond:.6g} identifiable={full}")
    if schedule.Ttr >= 2:
        print(f"minimum schedule length={min_schedule_length(schedule.K, schedule.Ttr)}")
    return 0


def _cmd_validate(args: argparse.Namespace) -> int:
    load_experiment_config(args.config)
    print(f"{args.config}: OK")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "schedule":
            return _cmd_schedule(args)
        if args.command == "validate":
            return _cmd_validate(args)
        raise AssertionError(f"unhandled command {args.command}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (PilotCovError, np.linalg.LinAlgError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
