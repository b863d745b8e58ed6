"""Synthetic request stream generation.

Requests are drawn from a bucketed token-count mix, arrive via a Poisson
process whose rate is set from a target offered load, and carry per-request
size priors (p50/p90) whose fidelity depends on the configured information
level.  Streams are fully determined by (mix, congestion, n, seed), so runs
are reproducible bit for bit.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class Bucket(enum.Enum):
    SHORT = "short"
    MEDIUM = "medium"
    LONG = "long"
    XLONG = "xlong"


class RequestClass(enum.Enum):
    INTERACTIVE = "interactive"
    HEAVY = "heavy"


class RequestState(enum.Enum):
    PENDING = "pending"
    DEFERRED = "deferred"
    IN_FLIGHT = "in_flight"
    COMPLETED = "completed"
    REJECTED = "rejected"
    TIMED_OUT = "timed_out"


class Mix(enum.Enum):
    BALANCED = "balanced"
    HEAVY_DOMINATED = "heavy_dominated"


class Congestion(enum.Enum):
    MEDIUM = "medium"
    HIGH = "high"


class InformationLevel(enum.Enum):
    BLIND = "blind"
    CLASS_ONLY = "class_only"
    COARSE = "coarse"
    ORACLE = "oracle"


# Inclusive token ranges per bucket; xlong is capped to keep service times finite.
XLONG_CAP = 4096
BUCKET_RANGES: dict[Bucket, tuple[int, int]] = {
    Bucket.SHORT: (1, 64),
    Bucket.MEDIUM: (65, 256),
    Bucket.LONG: (257, 1024),
    Bucket.XLONG: (1025, XLONG_CAP),
}
BUCKET_ORDER = (Bucket.SHORT, Bucket.MEDIUM, Bucket.LONG, Bucket.XLONG)

MIX_PROPORTIONS: dict[Mix, tuple[float, float, float, float]] = {
    Mix.BALANCED: (0.50, 0.25, 0.15, 0.10),
    Mix.HEAVY_DOMINATED: (0.20, 0.20, 0.30, 0.30),
}
# 70% long/xlong mix used by the allocation-fairness comparison.
FAIRNESS_MIX: tuple[float, float, float, float] = (0.15, 0.15, 0.35, 0.35)

# Neutral size prior: geometric midpoint of the medium bucket.
NEUTRAL_PRIOR_TOKENS = math.sqrt(65 * 256)

_STREAM_WORKLOAD = 0x57524B
_STREAM_NOISE = 0x4E4F49


def bucket_for_tokens(tokens: int) -> Bucket:
    """Map a token count to its bucket; counts above the xlong cap stay xlong."""
    if tokens <= 0:
        raise ValueError(f"token count must be positive, got {tokens}")
    if tokens <= 64:
        return Bucket.SHORT
    if tokens <= 256:
        return Bucket.MEDIUM
    if tokens <= 1024:
        return Bucket.LONG
    return Bucket.XLONG


def class_for_bucket(bucket: Bucket) -> RequestClass:
    if bucket in (Bucket.SHORT, Bucket.MEDIUM):
        return RequestClass.INTERACTIVE
    return RequestClass.HEAVY


def bucket_for_quantile(mix: tuple[float, float, float, float], u: float) -> Bucket:
    """Inverse-CDF bucket draw: u in [0, 1) against the mix's cumulative shares."""
    acc = 0.0
    for share, bucket in zip(mix, BUCKET_ORDER):
        acc += share
        if u < acc:
            return bucket
    return Bucket.XLONG


@dataclass
class Request:
    """One client call moving through the run."""

    id: int
    bucket: Bucket
    true_tokens: int
    arrival_ms: float
    deadline_ms: float
    prior_p50: float = NEUTRAL_PRIOR_TOKENS
    prior_p90: float = NEUTRAL_PRIOR_TOKENS
    cls: RequestClass = RequestClass.INTERACTIVE
    state: RequestState = RequestState.PENDING
    # Lifecycle fields filled in by the run loop.
    dispatch_ms: float | None = None
    completion_ms: float | None = None
    service_ms: float | None = None
    defer_attempts: int = 0

    def __post_init__(self) -> None:
        self.cls = class_for_bucket(self.bucket)

    @property
    def latency_ms(self) -> float | None:
        if self.completion_ms is None:
            return None
        return self.completion_ms - self.arrival_ms


@dataclass(frozen=True)
class WorkloadConfig:
    """Stream-shaping knobs; defaults target the scaled provider physics."""

    n: int = 200
    rho_medium: float = 0.7
    rho_high: float = 1.5
    # Reference provider physics used to derive the arrival rate from rho.
    ref_capacity: int = 8
    ref_base_ms: float = 50.0
    ref_per_token_ms: float = 0.5
    deadlines_ms: dict[Bucket, float] = field(
        default_factory=lambda: {
            Bucket.SHORT: 2_000.0,
            Bucket.MEDIUM: 10_000.0,
            Bucket.LONG: 40_000.0,
            Bucket.XLONG: 90_000.0,
        }
    )
    time_scale: float = 1.0  # multiplies deadlines; >1 for calibrated physics


def expected_tokens_log_uniform(lo: int, hi: int) -> float:
    """Mean of the continuous log-uniform distribution on [lo, hi]."""
    if lo == hi:
        return float(lo)
    return (hi - lo) / math.log(hi / lo)


def mean_service_ms(mix: tuple[float, float, float, float], config: WorkloadConfig) -> float:
    """Unloaded mean service time implied by the mix under reference physics."""
    mean_tokens = sum(
        share * expected_tokens_log_uniform(*BUCKET_RANGES[bucket])
        for share, bucket in zip(mix, BUCKET_ORDER)
    )
    return config.ref_base_ms + config.ref_per_token_ms * mean_tokens


def arrival_rate_per_ms(
    mix: tuple[float, float, float, float],
    congestion: Congestion,
    config: WorkloadConfig,
    mean_service: float | None = None,
) -> float:
    """Poisson rate such that offered load rho ~= E[service] * lambda / capacity."""
    rho = config.rho_medium if congestion is Congestion.MEDIUM else config.rho_high
    service = mean_service_ms(mix, config) if mean_service is None else mean_service
    return rho * config.ref_capacity / service


def _sample_tokens(bucket: Bucket, rng: np.random.Generator) -> int:
    lo, hi = BUCKET_RANGES[bucket]
    tokens = int(round(math.exp(rng.uniform(math.log(lo), math.log(hi)))))
    return min(max(tokens, lo), hi)


def _build_stream(
    mix: tuple[float, float, float, float],
    congestion: Congestion,
    n: int,
    seed: int,
    config: WorkloadConfig,
    tokens_source: np.ndarray | None = None,
) -> list[Request]:
    if n < 1:
        raise ValueError(f"stream length must be >= 1, got {n}")
    rng = np.random.default_rng([seed, _STREAM_WORKLOAD])
    if tokens_source is None:
        rate = arrival_rate_per_ms(mix, congestion, config)
    else:
        mean_service = config.ref_base_ms + config.ref_per_token_ms * float(
            np.mean(tokens_source)
        )
        rate = arrival_rate_per_ms(mix, congestion, config, mean_service=mean_service)

    requests: list[Request] = []
    now = 0.0
    for rid in range(n):
        now += rng.exponential(1.0 / rate)
        if tokens_source is None:
            bucket = bucket_for_quantile(mix, rng.uniform())
            tokens = _sample_tokens(bucket, rng)
        else:
            tokens = int(tokens_source[rid])
            bucket = bucket_for_tokens(tokens)
        deadline = now + config.deadlines_ms[bucket] * config.time_scale
        requests.append(
            Request(
                id=rid,
                bucket=bucket,
                true_tokens=tokens,
                arrival_ms=now,
                deadline_ms=deadline,
            )
        )
    return requests


def generate_stream(
    mix: Mix | tuple[float, float, float, float],
    congestion: Congestion,
    n: int,
    seed: int,
    config: WorkloadConfig | None = None,
) -> list[Request]:
    """Generate n requests for the given mix/congestion regime.

    Identical arguments produce a bit-identical stream.  `mix` accepts either
    a named mix or explicit bucket proportions (which must sum to 1).
    """
    config = config or WorkloadConfig()
    proportions = MIX_PROPORTIONS[mix] if isinstance(mix, Mix) else mix
    if abs(sum(proportions) - 1.0) > 1e-9:
        raise ValueError(f"mix proportions must sum to 1, got {proportions}")
    return _build_stream(proportions, congestion, n, seed, config)


def _coarse_priors(bucket: Bucket) -> tuple[float, float]:
    lo, hi = BUCKET_RANGES[bucket]
    return math.sqrt(lo * hi), float(hi)


def attach_priors(
    stream: list[Request],
    level: InformationLevel,
    noise_l: float = 0.0,
    seed: int = 0,
) -> list[Request]:
    """Attach p50/p90 priors in place according to the information level.

    Coarse priors are the bucket geometric midpoint (p50) and upper bound
    (p90), both scaled by one per-request factor u ~ U[1-L, 1+L] drawn
    deterministically from (seed, request id).  Oracle sets both to the true
    token count; class-only and blind use the neutral constant.
    """
    if not 0.0 <= noise_l < 1.0:
        raise ValueError(f"noise level must be in [0, 1), got {noise_l}")
    for req in stream:
        if level is InformationLevel.ORACLE:
            p50 = p90 = float(req.true_tokens)
        elif level is InformationLevel.COARSE:
            p50, p90 = _coarse_priors(req.bucket)
            if noise_l > 0.0:
                rng = np.random.default_rng([seed, _STREAM_NOISE, req.id])
                u = rng.uniform(1.0 - noise_l, 1.0 + noise_l)
                p50 *= u
                p90 *= u
        else:  # class-only and blind both see the neutral constant
            p50 = p90 = NEUTRAL_PRIOR_TOKENS
        if p50 > p90:
            p50, p90 = p90, p50
        req.prior_p50 = p50
        req.prior_p90 = p90
    return stream


class TraceError(ValueError):
    """Raised when a token-count trace file cannot be parsed."""


def read_trace_tokens(path: str | Path) -> list[int]:
    """Read a one-column token-count trace (newline/CSV, optional header)."""
    path = Path(path)
    tokens: list[int] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip().rstrip(",")
            if not line:
                continue
            if lineno == 1 and line.lower() == "tokens":
                continue
            try:
                value = int(line)
            except ValueError:
                raise TraceError(f"{path}: line {lineno}: not an integer: {line!r}") from None
            if value <= 0:
                raise TraceError(f"{path}: line {lineno}: token count must be positive: {value}")
            tokens.append(value)
    if not tokens:
        raise TraceError(f"{path}: no token counts found")
    return tokens


def load_trace(
    path: str | Path,
    n: int,
    seed: int,
    congestion: Congestion = Congestion.HIGH,
    replace_sampling: bool = False,
    config: WorkloadConfig | None = None,
) -> list[Request]:
    """Build a stream whose token counts are drawn from a trace file.

    Sampling is without replacement unless `replace_sampling` is set, in which
    case n may exceed the number of rows.  Arrivals, deadlines and bucketing
    follow the synthetic generator; the empirical mean token count sets the
    arrival rate.
    """
    config = config or WorkloadConfig()
    values = np.array(read_trace_tokens(path), dtype=np.int64)
    if not replace_sampling and n > len(values):
        raise ValueError(
            f"requested {n} samples from a {len(values)}-row trace; "
            "pass replace_sampling=True to sample with replacement"
        )
    rng = np.random.default_rng([seed, _STREAM_WORKLOAD, 1])
    drawn = rng.choice(values, size=n, replace=replace_sampling)
    # Mix proportions are irrelevant when tokens come from the trace; pass the
    # empirical split only for rate bookkeeping symmetry.
    return _build_stream(
        MIX_PROPORTIONS[Mix.BALANCED], congestion, n, seed, config, tokens_source=drawn
    )

