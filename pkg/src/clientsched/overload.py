"""Admission boundary: severity scoring and the bucket cost ladder.

Severity is a convex combination of client-visible signals.  Above the
configured thresholds a request's bucket weight decides its fate: weight-0
buckets always pass, weight-1 buckets defer at t1 and reject at t3, weight-2
buckets defer at t1 and reject at t2.  Short requests are never deferred or
rejected under any policy.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field

from .metrics import percentile
from .provider import Observables
from .workload import Bucket, Request


class Action(enum.Enum):
    ADMIT = "admit"
    DEFER = "defer"
    REJECT = "reject"


class BucketPolicy(enum.Enum):
    COST_LADDER = "ladder"
    UNIFORM_MILD = "uniform_mild"
    UNIFORM_HARSH = "uniform_harsh"
    REVERSE = "reverse"


# Shedding weight per bucket: 0 = never shed, 1 = defer@t1/reject@t3,
# 2 = defer@t1/reject@t2.  Short is absent on purpose (always admitted).
POLICY_WEIGHTS: dict[BucketPolicy, dict[Bucket, int]] = {
    BucketPolicy.COST_LADDER: {Bucket.MEDIUM: 0, Bucket.LONG: 1, Bucket.XLONG: 2},
    BucketPolicy.UNIFORM_MILD: {Bucket.MEDIUM: 1, Bucket.LONG: 1, Bucket.XLONG: 1},
    BucketPolicy.UNIFORM_HARSH: {Bucket.MEDIUM: 2, Bucket.LONG: 2, Bucket.XLONG: 2},
    BucketPolicy.REVERSE: {Bucket.MEDIUM: 0, Bucket.LONG: 2, Bucket.XLONG: 1},
}


@dataclass(frozen=True)
class SeverityWeights:
    """Signal weights, normalized to sum to 1."""

    w_load: float = 0.4
    w_queue: float = 0.3
    w_tail: float = 0.3

    def normalized(self) -> "SeverityWeights":
        total = self.w_load + self.w_queue + self.w_tail
        if total <= 0 or min(self.w_load, self.w_queue, self.w_tail) < 0:
            raise ValueError("severity weights must be non-negative with positive sum")
        return SeverityWeights(self.w_load / total, self.w_queue / total, self.w_tail / total)


@dataclass(frozen=True)
class OverloadConfig:
    policy: BucketPolicy = BucketPolicy.COST_LADDER
    t1: float = 0.45  # defer threshold
    t2: float = 0.65  # reject threshold for weight-2 buckets
    t3: float = 0.80  # reject threshold for weight-1 buckets
    weights: SeverityWeights = field(default_factory=SeverityWeights)
    backoff_base_ms: float = 500.0
    # Cap near the worst-case single service time: deferred work re-polls at
    # the pipe's drain timescale instead of idling it in synchronized waves.
    backoff_cap_ms: float = 2_000.0
    # Signal normalizers: unshipped estimated tokens saturating queue_pressure
    # (64 quanta), and the recent-call P95 target saturating
    # tail_latency_ratio.  The tail window is a time horizon so a drained,
    # idle system always decays below the defer threshold and must re-admit.
    pressure_ref_tokens: float = 16_384.0
    tail_target_ms: float = 8_000.0
    tail_horizon_ms: float = 8_000.0


@dataclass(frozen=True)
class OverloadDecision:
    action: Action
    severity_at_decision: float
    backoff_ms: float = 0.0


def severity(obs: Observables, weights: SeverityWeights) -> float:
    """Convex combination of the three congestion signals; result in [0, 1]."""
    w = weights.normalized()
    value = (
        w.w_load * obs.provider_load
        + w.w_queue * obs.queue_pressure
        + w.w_tail * obs.tail_latency_ratio
    )
    return min(1.0, max(0.0, value))


def decide(req: Request, sev: float, config: OverloadConfig) -> OverloadDecision:
    """Admission decision for one request at the given severity."""
    if req.bucket is Bucket.SHORT:
        return OverloadDecision(Action.ADMIT, sev)
    weight = POLICY_WEIGHTS[config.policy][req.bucket]
    if weight == 0:
        return OverloadDecision(Action.ADMIT, sev)
    reject_at = config.t2 if weight == 2 else config.t3
    if sev >= reject_at:
        return OverloadDecision(Action.REJECT, sev)
    if sev >= config.t1:
        wait = backoff(req.defer_attempts + 1, config.backoff_base_ms, config.backoff_cap_ms)
        return OverloadDecision(Action.DEFER, sev, backoff_ms=wait)
    return OverloadDecision(Action.ADMIT, sev)


def backoff(attempt: int, base_ms: float = 500.0, cap_ms: float = 8_000.0) -> float:
    """Exponential backoff: base * 2^(attempt-1), capped."""
    if attempt < 1:
        raise ValueError(f"attempt must be >= 1, got {attempt}")
    exponent = min(attempt - 1, 62)  # avoid overflow; cap dominates long before
    return min(base_ms * (2.0**exponent), cap_ms)


class SignalTracker:
    """Maintains the client-visible signals the severity score consumes.

    Queue pressure counts all unshipped estimated tokens: requests waiting in
    class queues plus deferred requests waiting out their backoff.  Deferral
    moves work aside without discharging it, so it must not mask the signal.
    The tail ratio looks at call latencies (dispatch to completion) inside a
    sliding time horizon; with no recent completions it reads zero, which
    guarantees an idle drained client re-admits (severity falls to at most
    the queue weight, below the defer threshold).
    """

    def __init__(self, config: OverloadConfig, capacity: int) -> None:
        self.config = config
        self.capacity = capacity
        self.unshipped_tokens = 0.0
        self._recent: deque[tuple[float, float]] = deque()  # (completion time, call latency)
        self._tail_cache: tuple[float, int, float] | None = None  # (now, len, value)

    def on_arrival(self, cost: float) -> None:
        self.unshipped_tokens += cost

    def on_shipped(self, cost: float) -> None:
        """A dispatch or a rejection discharges the queued work."""
        self.unshipped_tokens = max(0.0, self.unshipped_tokens - cost)

    def on_completion(self, now: float, call_latency_ms: float) -> None:
        self._recent.append((now, call_latency_ms))
        self._tail_cache = None

    def _tail_ratio(self, now: float) -> float:
        horizon = self.config.tail_horizon_ms
        while self._recent and self._recent[0][0] < now - horizon:
            self._recent.popleft()
            self._tail_cache = None
        if not self._recent:
            return 0.0
        cached = self._tail_cache
        if cached is not None and cached[0] == now and cached[1] == len(self._recent):
            return cached[2]
        p95 = percentile([lat for _, lat in self._recent], 0.95)
        tail = min(1.0, p95 / self.config.tail_target_ms)
        self._tail_cache = (now, len(self._recent), tail)
        return tail

    def observe(self, inflight: int, now: float) -> Observables:
        load = min(1.0, max(0.0, inflight / self.capacity))
        pressure = min(1.0, self.unshipped_tokens / self.config.pressure_ref_tokens)
        return Observables(load, pressure, self._tail_ratio(now))
