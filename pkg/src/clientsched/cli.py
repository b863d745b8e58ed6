"""Command line interface.

Subcommands: `run <experiment>` executes one named experiment and writes its
CSV tables, `validate` checks a scenario configuration, `list` prints the
experiment catalog.  Config-file values are overridden by CLI flags.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .config import ScenarioConfig, apply_overrides, parse_config_file, validate_config
from .harness import (
    DEFAULT_SEEDS,
    EXPERIMENTS,
    available_parallelism,
    cell_count,
    experiment_descriptions,
    run_experiment,
)


def parse_seeds(spec: str) -> tuple[int, ...]:
    """Accept '0-4' ranges or '0,1,2' lists."""
    spec = spec.strip()
    if "-" in spec and "," not in spec:
        lo, hi = spec.split("-", 1)
        return tuple(range(int(lo), int(hi) + 1))
    return tuple(int(part) for part in spec.split(",") if part.strip())


def _load_base_config(args: argparse.Namespace) -> ScenarioConfig:
    base = ScenarioConfig()
    if args.config:
        base = apply_overrides(base, parse_config_file(args.config))
    if getattr(args, "n", None):
        base = replace(base, n=args.n)
    if getattr(args, "physics", None):
        base = replace(base, physics=args.physics)
    return base


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clientsched",
        description="Client-side scheduling simulator against a congestion-aware mock provider",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one experiment and write CSV tables")
    run_p.add_argument("experiment", choices=EXPERIMENTS)
    run_p.add_argument("--out", required=True, help="output directory for CSV tables")
    run_p.add_argument("--seeds", default=None, help="seed list '0,1,2' or range '0-4'")
    run_p.add_argument("--n", type=int, default=None, help="requests per run")
    run_p.add_argument("--physics", choices=("scaled", "calibrated"), default=None)
    run_p.add_argument(
        "--parallelism", type=int, default=available_parallelism(), help="worker processes"
    )
    run_p.add_argument("--config", default=None, help="key=value config file")
    run_p.add_argument("--trace", default=None, help="token-count trace for trace_replay")
    run_p.add_argument(
        "--calibration", default=None, help="bucket calibration CSV for the calibration fit"
    )
    run_p.add_argument(
        "--dump-runlogs",
        action="store_true",
        help="also write per-request, decision, and severity CSVs for each cell's first seed",
    )

    val_p = sub.add_parser("validate", help="validate a scenario configuration")
    val_p.add_argument("--config", default=None, help="key=value config file")

    sub.add_parser("list", help="list experiments and their cell counts")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "list":
        for name, description in experiment_descriptions().items():
            print(f"{name:18s} {description}")
        return 0

    if args.command == "validate":
        try:
            base = _load_base_config(args)
        except (ValueError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        errors = validate_config(base)
        if errors:
            for err in errors:
                print(f"error: {err}", file=sys.stderr)
            return 1
        print(f"ok (config hash {base.config_hash()})")
        return 0

    # run
    try:
        base = _load_base_config(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    errors = validate_config(base)
    if errors:
        for err in errors:
            print(f"error: {err}", file=sys.stderr)
        return 1
    seeds = parse_seeds(args.seeds) if args.seeds else DEFAULT_SEEDS
    result = run_experiment(
        args.experiment,
        args.out,
        parallelism=max(1, args.parallelism),
        seeds=seeds,
        base=base,
        trace_path=args.trace,
        calibration_path=args.calibration,
        dump_runlogs=args.dump_runlogs,
    )
    total_runs = cell_count(args.experiment) * len(seeds)
    for path in result.csv_paths:
        print(path)
    print(f"{args.experiment}: {len(result.cells)} cells, {total_runs} runs")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
