"""Experiment matrix: named experiments, seed sweeps, CSV tables.

Cell lists are generated from cross products, never hand-enumerated.  Each
output row aggregates one cell's seeds (mean and sample std per metric) and
carries the cell's config hash plus its seed list, so any row can be
reproduced from its stamp.  Cells may run in a process pool; results merge in
deterministic cell order regardless of completion order.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

from .config import ScenarioConfig, Strategy, validate_config
from .metrics import SUMMARY_METRICS, CellSummary, RunSummary, aggregate, summarize
from .overload import BucketPolicy
from .provider import fit_calibration, read_calibration_csv
from .scheduler import (
    ConfigError,
    audit_conservation,
    audit_feasibility,
    audit_work_conservation,
    count_short_shedding,
    observables_in_bounds,
    run,
    write_decisions_csv,
    write_runlog_csv,
    write_severity_csv,
)
from .workload import Congestion, InformationLevel, Mix

DEFAULT_SEEDS = (0, 1, 2, 3, 4)

REGIMES: tuple[tuple[str, Congestion], ...] = (
    (Mix.BALANCED.value, Congestion.MEDIUM),
    (Mix.BALANCED.value, Congestion.HIGH),
    (Mix.HEAVY_DOMINATED.value, Congestion.MEDIUM),
    (Mix.HEAVY_DOMINATED.value, Congestion.HIGH),
)
HIGH_REGIMES = tuple(r for r in REGIMES if r[1] is Congestion.HIGH)

NOISE_LEVELS = (0.0, 0.1, 0.2, 0.4, 0.6)

EXPERIMENTS = (
    "main_benchmark",
    "info_ladder",
    "overload_policy",
    "fairness",
    "sensitivity",
    "noise_sweep",
    "trace_replay",
    "calibration",
)

TABLE_NAMES = {
    "main_benchmark": "main_benchmark_summary.csv",
    "info_ladder": "prior_ablation_summary.csv",
    "overload_policy": "overload_policy_comparison_summary.csv",
    "fairness": "fairness_summary.csv",
    "sensitivity": "sensitivity_summary.csv",
    "noise_sweep": "predictor_noise_summary.csv",
    "trace_replay": "trace_replay_summary.csv",
}


@dataclass(frozen=True)
class Cell:
    experiment: str
    config: ScenarioConfig  # per-seed runs replace config.seed
    variant: str = "baseline"
    context_only: bool = False


@dataclass
class RunAudit:
    short_defers: int
    short_rejects: int
    feasibility_violations: int
    work_conservation_violations: int
    conservation_violations: int
    observables_bounded: bool
    digest: str


@dataclass
class CellResult:
    cell: Cell
    seeds: tuple[int, ...]
    summaries: list[RunSummary]
    audits: list[RunAudit]
    aggregate: CellSummary


@dataclass
class ExperimentResult:
    name: str
    cells: list[CellResult]
    csv_paths: list[Path] = field(default_factory=list)


def _execute_cell_seed(config: ScenarioConfig) -> tuple[RunSummary, RunAudit]:
    log = run(config)
    short_defers, short_rejects = count_short_shedding(log)
    audit = RunAudit(
        short_defers=short_defers,
        short_rejects=short_rejects,
        feasibility_violations=audit_feasibility(log),
        work_conservation_violations=audit_work_conservation(log),
        conservation_violations=0 if log.horizon_ms is not None else audit_conservation(log),
        observables_bounded=observables_in_bounds(log),
        digest=log.digest(),
    )
    return summarize(log), audit


def _build_regime_config(base: ScenarioConfig, mix: str, congestion: Congestion) -> ScenarioConfig:
    return replace(base, mix=mix, congestion=congestion)


def build_cells(
    name: str,
    base: ScenarioConfig,
    trace_path: str | None = None,
) -> list[Cell]:
    """Enumerate one experiment's cells from its cross product."""
    cells: list[Cell] = []
    if name == "main_benchmark":
        for mix, congestion in REGIMES:
            cfg = _build_regime_config(base, mix, congestion)
            for strategy in (Strategy.QUOTA_TIERED, Strategy.ADAPTIVE_DRR, Strategy.FINAL_OLC):
                cells.append(Cell(name, replace(cfg, strategy=strategy)))
            cells.append(
                Cell(name, replace(cfg, strategy=Strategy.DIRECT_NAIVE), context_only=True)
            )
    elif name == "info_ladder":
        for mix, congestion in REGIMES:
            cfg = _build_regime_config(base, mix, congestion)
            for level in InformationLevel:
                cells.append(
                    Cell(name, replace(cfg, strategy=Strategy.FINAL_OLC, level=level))
                )
    elif name == "overload_policy":
        for mix, congestion in HIGH_REGIMES:
            cfg = _build_regime_config(base, mix, congestion)
            for policy in BucketPolicy:
                cells.append(
                    Cell(
                        name,
                        replace(
                            cfg,
                            strategy=Strategy.FINAL_OLC,
                            overload=replace(cfg.overload, policy=policy),
                        ),
                        variant=policy.value,
                    )
                )
    elif name == "fairness":
        cfg = replace(base, mix="heavy70", congestion=Congestion.HIGH)
        for strategy in (Strategy.DIRECT_NAIVE, Strategy.SHORT_PRIORITY, Strategy.FAIR_QUEUING_RR):
            cells.append(Cell(name, replace(cfg, strategy=strategy)))
    elif name == "sensitivity":
        cfg = replace(base, mix=Mix.BALANCED.value, congestion=Congestion.HIGH,
                      strategy=Strategy.FINAL_OLC)
        cells.append(Cell(name, cfg, variant="baseline"))
        for param in ("t1", "t2", "t3", "backoff_base"):
            for factor, tag in ((0.8, "-20pct"), (1.2, "+20pct")):
                cells.append(
                    Cell(name, _perturb_overload(cfg, param, factor), variant=f"{param}{tag}")
                )
    elif name == "noise_sweep":
        for level in NOISE_LEVELS:
            for mix, congestion in REGIMES:
                cfg = _build_regime_config(base, mix, congestion)
                cells.append(
                    Cell(
                        name,
                        replace(
                            cfg,
                            strategy=Strategy.FINAL_OLC,
                            level=InformationLevel.COARSE,
                            noise_l=level,
                        ),
                        variant=f"L={level}",
                    )
                )
    elif name == "trace_replay":
        trace = trace_path or str(default_trace_path())
        cfg = replace(base, congestion=Congestion.HIGH, trace_path=trace)
        for strategy in (Strategy.DIRECT_NAIVE, Strategy.QUOTA_TIERED, Strategy.FINAL_OLC):
            cells.append(Cell(name, replace(cfg, strategy=strategy)))
    else:
        raise ValueError(f"unknown experiment {name!r}; expected one of {EXPERIMENTS}")
    return cells


def _perturb_overload(cfg: ScenarioConfig, param: str, factor: float) -> ScenarioConfig:
    ov = cfg.overload
    if param == "backoff_base":
        return replace(cfg, overload=replace(ov, backoff_base_ms=ov.backoff_base_ms * factor))
    value = getattr(ov, param) * factor
    updated = replace(cfg, overload=replace(ov, **{param: value}))
    # Keep the threshold ordering invariant; a -20% t3 would cross t2.
    o = updated.overload
    if not o.t1 < o.t2 < o.t3:
        if param == "t3":
            updated = replace(updated, overload=replace(o, t3=min(0.99, o.t2 + 0.01)))
        elif param == "t2":
            updated = replace(
                updated, overload=replace(o, t2=min(o.t3 - 0.01, max(o.t1 + 0.01, o.t2)))
            )
        elif param == "t1":
            updated = replace(updated, overload=replace(o, t1=min(o.t2 - 0.01, o.t1)))
    return updated


def default_trace_path() -> Path:
    return Path(str(resources.files("clientsched").joinpath("data/sample_trace.csv")))


def default_calibration_path() -> Path:
    return Path(str(resources.files("clientsched").joinpath("data/latency_calibration.csv")))


def run_cells(
    cells: list[Cell],
    seeds: tuple[int, ...],
    parallelism: int = 1,
) -> list[CellResult]:
    """Run every (cell, seed) pair and aggregate per cell, in cell order."""
    configs = [
        replace(cell.config, seed=seed) for cell in cells for seed in seeds
    ]
    for cfg in configs:
        errors = validate_config(cfg)
        if errors:
            raise ConfigError(errors)
    if parallelism > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            outcomes = list(pool.map(_execute_cell_seed, configs, chunksize=4))
    else:
        outcomes = [_execute_cell_seed(cfg) for cfg in configs]

    results: list[CellResult] = []
    k = len(seeds)
    for i, cell in enumerate(cells):
        chunk = outcomes[i * k : (i + 1) * k]
        summaries = [s for s, _ in chunk]
        audits = [a for _, a in chunk]
        results.append(
            CellResult(
                cell=cell,
                seeds=seeds,
                summaries=summaries,
                audits=audits,
                aggregate=aggregate(summaries),
            )
        )
    return results


# -- CSV output ---------------------------------------------------------------

_MS_METRICS = {"short_p95_ms", "global_p95_ms", "short_p90_ms", "long_p90_ms", "makespan_ms"}
_FRACTION_METRICS = {"completion_rate", "deadline_satisfaction"}

_HEADER = [
    "experiment",
    "variant",
    "regime",
    "mix",
    "congestion",
    "strategy",
    "level",
    "bucket_policy",
    "noise_l",
    "n",
    "physics",
    "context_only",
    "seeds",
    "runs",
    "config_hash",
    "t1",
    "t2",
    "t3",
    "backoff_base_ms",
]
for _metric in SUMMARY_METRICS:
    _HEADER.append(f"{_metric}_mean")
    _HEADER.append(f"{_metric}_std")


def _fmt_metric(name: str, value: float | None) -> str:
    if value is None:
        return ""
    if name in _MS_METRICS:
        return f"{value:.1f}"
    if name in _FRACTION_METRICS:
        return f"{value:.2f}"
    if name in ("rejects_total", "defers_total"):
        return f"{value:.1f}"
    return f"{value:.2f}"


def result_row(result: CellResult) -> list[str]:
    cell = result.cell
    cfg = cell.config
    row = [
        cell.experiment,
        cell.variant,
        f"{cfg.mix}/{cfg.congestion.value}",
        cfg.mix,
        cfg.congestion.value,
        cfg.strategy.value,
        cfg.level.value,
        cfg.overload.policy.value,
        f"{cfg.noise_l:g}",
        str(cfg.n),
        cfg.physics,
        str(cell.context_only).lower(),
        " ".join(str(s) for s in result.seeds),
        str(result.aggregate.n_runs),
        replace(cfg, seed=result.seeds[0]).config_hash(),
        f"{cfg.overload.t1:.3f}",
        f"{cfg.overload.t2:.3f}",
        f"{cfg.overload.t3:.3f}",
        f"{cfg.overload.backoff_base_ms:.1f}",
    ]
    for metric in SUMMARY_METRICS:
        row.append(_fmt_metric(metric, result.aggregate.means[metric]))
        row.append(_fmt_metric(metric, result.aggregate.stds[metric]))
    return row


def write_summary_csv(results: list[CellResult], path: Path) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_HEADER)
        for result in results:
            writer.writerow(result_row(result))


def run_calibration(out_dir: Path, calibration_path: Path | None = None) -> list[Path]:
    """Fit the provider's latency line to the bucketed calibration summary."""
    source = calibration_path or default_calibration_path()
    points = read_calibration_csv(source)
    slope, intercept, r2 = fit_calibration(points)
    echo_path = out_dir / "latency_calibration.csv"
    echo_path.write_bytes(Path(source).read_bytes())
    fit_path = out_dir / "calibration_fit.csv"
    with fit_path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["slope_ms_per_token", "intercept_ms", "r2", "points"])
        writer.writerow([f"{slope:.6f}", f"{intercept:.6f}", f"{r2:.6f}", str(len(points))])
    return [echo_path, fit_path]


def run_experiment(
    name: str,
    out_dir: str | Path,
    parallelism: int = 1,
    seeds: tuple[int, ...] = DEFAULT_SEEDS,
    base: ScenarioConfig | None = None,
    trace_path: str | None = None,
    calibration_path: str | None = None,
    dump_runlogs: bool = False,
) -> ExperimentResult:
    """Run a named experiment and write its CSV table(s) under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = base or ScenarioConfig()

    if name == "calibration":
        paths = run_calibration(out, Path(calibration_path) if calibration_path else None)
        return ExperimentResult(name=name, cells=[], csv_paths=paths)

    cells = build_cells(name, base, trace_path=trace_path)
    results = run_cells(cells, seeds, parallelism=parallelism)
    table = out / TABLE_NAMES[name]
    write_summary_csv(results, table)
    paths = [table]
    if dump_runlogs:
        paths.extend(_dump_runlogs(name, results, out))
    return ExperimentResult(name=name, cells=results, csv_paths=paths)


def _dump_runlogs(name: str, results: list[CellResult], out: Path) -> list[Path]:
    """Re-run each cell's first seed and write its full logs (requests,
    decisions, severity trace).  Runs are deterministic, so the replay is
    exactly the logged run."""
    log_dir = out / "runlogs"
    log_dir.mkdir(exist_ok=True)
    paths: list[Path] = []
    for idx, result in enumerate(results):
        config = replace(result.cell.config, seed=result.seeds[0])
        log = run(config)
        stem = f"{name}_{idx:02d}_{result.cell.variant}_{config.strategy.value}_s{config.seed}"
        stem = stem.replace("/", "-").replace("=", "")
        for suffix, writer in (
            ("requests", write_runlog_csv),
            ("decisions", write_decisions_csv),
            ("severity", write_severity_csv),
        ):
            path = log_dir / f"{stem}_{suffix}.csv"
            writer(log, path)
            paths.append(path)
    return paths


def experiment_descriptions() -> dict[str, str]:
    base = ScenarioConfig()
    out: dict[str, str] = {}
    for name in EXPERIMENTS:
        if name == "calibration":
            out[name] = "weighted least-squares fit of the provider latency line (no runs)"
            continue
        cells = build_cells(name, base)
        out[name] = f"{len(cells)} cells x seeds -> {TABLE_NAMES[name]}"
    return out


def cell_count(name: str, base: ScenarioConfig | None = None) -> int:
    if name == "calibration":
        return 0
    return len(build_cells(name, base or ScenarioConfig()))


def available_parallelism() -> int:
    return max(1, os.cpu_count() or 1)
