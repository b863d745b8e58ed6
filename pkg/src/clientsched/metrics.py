"""Joint metric suite for one run, plus mean/std aggregation across seeds.

Tail latencies use the nearest-rank percentile over completed requests only.
Completion rate excludes rejected requests from its denominator (rejects are
reported separately); useful goodput counts only completed requests that met
their deadline.  Undefined metrics (e.g. a tail over zero completions) are
None and are excluded from aggregation with the exclusion count reported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

from .workload import Bucket, RequestClass, RequestState

if TYPE_CHECKING:  # pragma: no cover
    from .scheduler import RunLog


def percentile(values: list[float], p: float) -> float | None:
    """Nearest-rank percentile: rank = ceil(p * n) on the sorted list.

    Returns None for an empty list (undefined, distinct from zero).
    """
    if not values:
        return None
    if not 0.0 < p <= 1.0:
        raise ValueError(f"percentile fraction must be in (0, 1], got {p}")
    ordered = sorted(values)
    rank = max(1, math.ceil(p * len(ordered)))
    return ordered[rank - 1]


def mean(values: list[float]) -> float:
    return sum(values) / len(values)


def sample_std(values: list[float]) -> float:
    """Sample standard deviation (n-1 denominator); 0 for a single value."""
    n = len(values)
    if n <= 1:
        return 0.0
    m = mean(values)
    return math.sqrt(sum((v - m) ** 2 for v in values) / (n - 1))


@dataclass
class RunSummary:
    """Joint metrics for one (scenario, seed) run."""

    arrived: int
    completed: int
    rejected: int
    timed_out: int
    unfinished: int
    met_deadline: int
    completion_rate: float | None
    deadline_satisfaction: float | None
    useful_goodput_rps: float
    makespan_ms: float
    short_p95_ms: float | None
    short_p90_ms: float | None
    global_p95_ms: float | None
    global_p90_ms: float | None
    long_p90_ms: float | None
    rejects_total: int
    defers_total: int
    rejects_by_bucket: dict[Bucket, int] = field(default_factory=dict)
    defers_by_bucket: dict[Bucket, int] = field(default_factory=dict)


# Fields aggregated across seeds, in output order.
SUMMARY_METRICS: tuple[str, ...] = (
    "short_p95_ms",
    "global_p95_ms",
    "short_p90_ms",
    "long_p90_ms",
    "makespan_ms",
    "completion_rate",
    "deadline_satisfaction",
    "useful_goodput_rps",
    "rejects_total",
    "defers_total",
)


def summarize(log: "RunLog") -> RunSummary:
    """Reduce a drained (or horizon-cut) run log to its joint metrics."""
    requests = log.requests
    arrived = len(requests)
    completed = [r for r in requests if r.state is RequestState.COMPLETED]
    rejected = sum(1 for r in requests if r.state is RequestState.REJECTED)
    timed_out = sum(1 for r in requests if r.state is RequestState.TIMED_OUT)
    unfinished = arrived - len(completed) - rejected - timed_out

    met = [r for r in completed if r.completion_ms is not None and r.completion_ms <= r.deadline_ms]
    denominator = arrived - rejected
    completion_rate = len(completed) / denominator if denominator > 0 else None
    satisfaction = len(met) / len(completed) if completed else None

    if completed:
        first_arrival = min(r.arrival_ms for r in requests)
        last_completion = max(r.completion_ms for r in completed)
        makespan_ms = max(0.0, last_completion - first_arrival)
    else:
        makespan_ms = 0.0
    goodput = len(met) / (makespan_ms / 1000.0) if makespan_ms > 0 else 0.0

    latencies = [r.latency_ms for r in completed]
    short_lat = [r.latency_ms for r in completed if r.bucket is Bucket.SHORT]
    heavy_lat = [r.latency_ms for r in completed if r.cls is RequestClass.HEAVY]

    rejects_by_bucket: dict[Bucket, int] = {b: 0 for b in Bucket}
    defers_by_bucket: dict[Bucket, int] = {b: 0 for b in Bucket}
    for decision in log.decisions:
        if decision.action.value == "reject":
            rejects_by_bucket[decision.bucket] += 1
        elif decision.action.value == "defer":
            defers_by_bucket[decision.bucket] += 1

    return RunSummary(
        arrived=arrived,
        completed=len(completed),
        rejected=rejected,
        timed_out=timed_out,
        unfinished=unfinished,
        met_deadline=len(met),
        completion_rate=completion_rate,
        deadline_satisfaction=satisfaction,
        useful_goodput_rps=goodput,
        makespan_ms=makespan_ms,
        short_p95_ms=percentile(short_lat, 0.95),
        short_p90_ms=percentile(short_lat, 0.90),
        global_p95_ms=percentile(latencies, 0.95),
        global_p90_ms=percentile(latencies, 0.90),
        long_p90_ms=percentile(heavy_lat, 0.90),
        rejects_total=sum(rejects_by_bucket.values()),
        defers_total=sum(defers_by_bucket.values()),
        rejects_by_bucket=rejects_by_bucket,
        defers_by_bucket=defers_by_bucket,
    )


@dataclass
class CellSummary:
    """Per-metric mean and sample std over the seeds of one scenario cell."""

    n_runs: int
    means: dict[str, float | None]
    stds: dict[str, float | None]
    excluded: dict[str, int]


def aggregate(summaries: list[RunSummary]) -> CellSummary:
    if not summaries:
        raise ValueError("aggregate needs at least one run summary")
    means: dict[str, float | None] = {}
    stds: dict[str, float | None] = {}
    excluded: dict[str, int] = {}
    for name in SUMMARY_METRICS:
        values = [getattr(s, name) for s in summaries]
        defined = [float(v) for v in values if v is not None]
        excluded[name] = len(values) - len(defined)
        if defined:
            means[name] = mean(defined)
            stds[name] = sample_std(defined)
        else:
            means[name] = None
            stds[name] = None
    return CellSummary(n_runs=len(summaries), means=means, stds=stds, excluded=excluded)
