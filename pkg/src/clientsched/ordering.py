"""Intra-class sequencing for the heavy class.

Candidates eligible under the fairness constraint are scored by a weighted
combination of normalized waiting time, size penalty, and deadline urgency;
the highest score is released next.  The interactive class stays FIFO and
never consults this module.
"""

from __future__ import annotations

from dataclasses import dataclass

from .workload import Request


@dataclass(frozen=True)
class OrderingConfig:
    """Score weights; wait is measured in seconds so the terms share a scale."""

    w1: float = 1.0  # wait / cost gain
    w2: float = 0.5  # size penalty
    w3: float = 2.0  # urgency gain
    ref: float = 1024.0  # size normalizer, token units
    fifo_heavy: bool = False  # disable scoring (FIFO heavy lane) for ablations


def score(req: Request, now: float, config: OrderingConfig) -> float:
    """Priority of a pending request at simulation time `now` (ms)."""
    wait_s = max(0.0, now - req.arrival_ms) / 1000.0
    cost = req.prior_p50
    window = req.deadline_ms - req.arrival_ms
    urgency = 0.0
    if window > 0:
        urgency = min(1.0, max(0.0, (now - req.arrival_ms) / window))
    else:
        urgency = 1.0
    return config.w1 * (wait_s / cost) - config.w2 * (cost / config.ref) + config.w3 * urgency


def select_next(feasible: list[Request], now: float, config: OrderingConfig) -> Request | None:
    """Argmax-score candidate; ties break on earlier arrival, then lower id."""
    if not feasible:
        return None
    if config.fifo_heavy:
        return min(feasible, key=lambda r: (r.arrival_ms, r.id))
    return max(feasible, key=lambda r: (score(r, now, config), -r.arrival_ms, -r.id))
