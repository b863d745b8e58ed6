"""Discrete-event engine and the congestion-aware mock provider.

The provider is a black box from the client's point of view: the client sees
only dispatches and completions.  Service time grows linearly with output
tokens and inflates when the number of concurrent calls at dispatch exceeds
the provider's comfortable capacity.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Any, Callable

from .workload import Request, RequestState


@dataclass(frozen=True)
class ProviderState:
    """Mock provider physics.

    `scaled` keeps desk runs fast; `calibrated` mirrors a production API's
    measured per-token latency line.  The slowdown term is linear in the
    normalized excess in-flight work.
    """

    capacity: int = 8
    base_ms: float = 50.0
    per_token_ms: float = 0.5
    alpha: float = 2.0
    timeout_ms: float = 120_000.0

    @classmethod
    def scaled(cls) -> "ProviderState":
        return cls()

    @classmethod
    def calibrated(cls) -> "ProviderState":
        # Time constants stretch with the per-token cost ratio (18.7 / 0.5).
        scale = 18.7 / 0.5
        return cls(base_ms=3294.0, per_token_ms=18.7, timeout_ms=120_000.0 * scale)


def service_time(tokens: int, inflight_at_dispatch: int, state: ProviderState) -> float:
    """Service time in ms for a call dispatched while `inflight_at_dispatch` others run."""
    if tokens < 1:
        raise ValueError(f"token count must be >= 1, got {tokens}")
    base = state.base_ms + state.per_token_ms * tokens
    excess = max(0, inflight_at_dispatch - state.capacity) / state.capacity
    return base * (1.0 + state.alpha * excess)


class SimClock:
    """Event queue ordered by (time, insertion sequence); ties pop in insertion order."""

    def __init__(self) -> None:
        self.now = 0.0
        self._seq = itertools.count()
        self._heap: list[tuple[float, int, Callable[[float], None]]] = []

    def push(self, at: float, action: Callable[[float], None]) -> None:
        if at < self.now:
            raise ValueError(f"cannot schedule event at {at} before now={self.now}")
        heapq.heappush(self._heap, (at, next(self._seq), action))

    def peek_time(self) -> float | None:
        return self._heap[0][0] if self._heap else None

    def step(self) -> bool:
        """Pop and run the next event; returns False when the queue is empty."""
        if not self._heap:
            return False
        at, _, action = heapq.heappop(self._heap)
        self.now = at
        action(at)
        return True

    def run(self, horizon_ms: float | None = None, max_events: int = 5_000_000) -> None:
        processed = 0
        while self._heap:
            if horizon_ms is not None and self._heap[0][0] > horizon_ms:
                break
            self.step()
            processed += 1
            if processed > max_events:
                raise RuntimeError(
                    f"event budget exceeded ({max_events}); run is not converging"
                )


@dataclass
class Observables:
    """Client-visible congestion signals, each clamped to [0, 1]."""

    provider_load: float
    queue_pressure: float
    tail_latency_ratio: float


@dataclass
class Provider:
    """Mock provider bound to a clock; tracks in-flight calls it was handed."""

    state: ProviderState
    clock: SimClock
    inflight: set[int] = field(default_factory=set)

    def dispatch(
        self,
        req: Request,
        at: float,
        on_done: Callable[[Request, float], None],
    ) -> float:
        """Mark the request in flight and schedule its terminal event.

        Returns the realized service time.  A call whose service time exceeds
        the provider timeout produces a timeout event instead of a completion.
        """
        assert req.state is RequestState.PENDING, f"dispatching non-pending request {req.id}"
        duration = service_time(req.true_tokens, len(self.inflight), self.state)
        req.state = RequestState.IN_FLIGHT
        req.dispatch_ms = at
        req.service_ms = duration
        self.inflight.add(req.id)

        if duration > self.state.timeout_ms:
            terminal_state = RequestState.TIMED_OUT
            done_at = at + self.state.timeout_ms
        else:
            terminal_state = RequestState.COMPLETED
            done_at = at + duration

        def _finish(t: float, req=req, terminal=terminal_state) -> None:
            self.inflight.discard(req.id)
            req.state = terminal
            req.completion_ms = t
            on_done(req, t)

        self.clock.push(done_at, _finish)
        return duration


def fit_calibration(
    points: list[tuple[float, float, float]],
) -> tuple[float, float, float]:
    """Count-weighted least-squares line through (mean_tokens, mean_latency_ms, count) points.

    Returns (slope ms/token, intercept ms, weighted r^2).
    """
    if len(points) < 2:
        raise ValueError("calibration fit needs at least two points")
    xs = [float(p[0]) for p in points]
    ys = [float(p[1]) for p in points]
    ws = [float(p[2]) for p in points]
    if any(w <= 0 for w in ws):
        raise ValueError("calibration point counts must be positive")
    if len(set(xs)) < 2:
        raise ValueError("calibration fit needs at least two distinct token means")

    total = sum(ws)
    xbar = sum(w * x for w, x in zip(ws, xs)) / total
    ybar = sum(w * y for w, y in zip(ws, ys)) / total
    sxx = sum(w * (x - xbar) ** 2 for w, x in zip(ws, xs))
    sxy = sum(w * (x - xbar) * (y - ybar) for w, x, y in zip(ws, xs, ys))
    slope = sxy / sxx
    intercept = ybar - slope * xbar
    ss_res = sum(w * (y - (intercept + slope * x)) ** 2 for w, x, y in zip(ws, xs, ys))
    ss_tot = sum(w * (y - ybar) ** 2 for w, y in zip(ws, ys))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return slope, intercept, r2


def read_calibration_csv(path: Any) -> list[tuple[float, float, float]]:
    """Parse the bucket calibration summary CSV into fit points.

    Expected header: bucket,count,mean_tokens,std_tokens,mean_latency_ms,std_latency_ms.
    """
    import csv
    from pathlib import Path

    rows: list[tuple[float, float, float]] = []
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"bucket", "count", "mean_tokens", "mean_latency_ms"}
        if reader.fieldnames is None or not required.issubset(set(reader.fieldnames)):
            raise ValueError(f"{path}: expected columns {sorted(required)}")
        for row in reader:
            rows.append(
                (float(row["mean_tokens"]), float(row["mean_latency_ms"]), float(row["count"]))
            )
    if not rows:
        raise ValueError(f"{path}: no calibration rows")
    return rows
