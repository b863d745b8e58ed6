"""Inter-class allocation of send opportunities.

The default policy is deficit round robin over two classes: each visit tops a
class's deficit up by quantum * effective_weight, and the class may emit while
the deficit covers the cheapest pending request's estimated cost.  Congestion
feedback scales the interactive class's effective weight, and an idle class's
turn passes to its backlogged peer so the link never idles (borrowing).

The two alternatives trade that machinery for strict round-robin alternation
(fair queuing) or absolute interactive priority.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .workload import RequestClass

# Safety valve for the visit loop; deficits top up by at least one quantum per
# visit, so max_cost / quantum visits always suffice.
_VISIT_CAP = 100_000


class AllocationPolicy(enum.Enum):
    ADAPTIVE_DRR = "adaptive_drr"
    FAIR_QUEUING_RR = "fair_queuing_rr"
    SHORT_PRIORITY = "short_priority"


@dataclass(frozen=True)
class AllocationConfig:
    policy: AllocationPolicy = AllocationPolicy.ADAPTIVE_DRR
    quantum: float = 256.0
    weight_interactive: float = 1.0
    weight_heavy: float = 1.0
    gamma: float = 1.0  # congestion gain on the interactive class's weight


@dataclass
class ClassQueue:
    """Pending requests of one class, with the DRR deficit bookkeeping.

    A FIFO lane is eligible when its head is covered; a scored lane is
    eligible when any pending request is covered (the feasible set is the
    cost-covered subset).
    """

    cls: RequestClass
    weight: float = 1.0
    deficit: float = 0.0
    fifo: bool = False
    # (request id, estimated cost) in arrival order.
    pending: list[tuple[int, float]] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not self.pending

    def push(self, request_id: int, cost: float) -> None:
        self.pending.append((request_id, cost))

    def remove(self, request_id: int) -> None:
        for i, (rid, _) in enumerate(self.pending):
            if rid == request_id:
                del self.pending[i]
                break
        else:
            raise KeyError(f"request {request_id} not pending in {self.cls}")
        if not self.pending:
            self.deficit = 0.0

    def min_cost(self) -> float:
        return min(cost for _, cost in self.pending)

    def head_cost(self) -> float:
        return self.pending[0][1]

    def head_id(self) -> int:
        return self.pending[0][0]

    def eligible_cost(self) -> float:
        """Cost the deficit must cover before this lane may emit."""
        return self.head_cost() if self.fifo else self.min_cost()


def on_emit(queue: ClassQueue, request_id: int, cost: float) -> None:
    """Account one DRR emission: spend the deficit and drop the request."""
    assert queue.deficit >= cost, (
        f"emitting {cost} from {queue.cls} with deficit {queue.deficit}"
    )
    queue.deficit -= cost
    queue.remove(request_id)


class Allocator:
    """Chooses which class emits next under the configured policy."""

    def __init__(self, config: AllocationConfig, heavy_fifo: bool = False) -> None:
        self.config = config
        self.queues: dict[RequestClass, ClassQueue] = {
            RequestClass.INTERACTIVE: ClassQueue(
                RequestClass.INTERACTIVE, weight=config.weight_interactive, fifo=True
            ),
            RequestClass.HEAVY: ClassQueue(
                RequestClass.HEAVY, weight=config.weight_heavy, fifo=heavy_fifo
            ),
        }
        self.turn = RequestClass.INTERACTIVE
        self._topped_up = False  # current turn holder already got its quantum
        self._last_emitted: RequestClass | None = None

    def queue(self, cls: RequestClass) -> ClassQueue:
        return self.queues[cls]

    def effective_weight(self, cls: RequestClass, severity: float) -> float:
        q = self.queues[cls]
        if cls is RequestClass.INTERACTIVE:
            return q.weight * (1.0 + self.config.gamma * severity)
        return q.weight

    def next_class(self, severity: float = 0.0) -> RequestClass | None:
        """Pick the class that may emit now, or None if both queues are empty.

        For DRR this mutates deficits: ineligible visited classes are topped
        up until some class's deficit covers its cheapest pending cost.
        Deficit accumulation is instantaneous, so a free send slot is never
        left idle while work is pending.
        """
        policy = self.config.policy
        iq = self.queues[RequestClass.INTERACTIVE]
        hq = self.queues[RequestClass.HEAVY]
        if iq.empty and hq.empty:
            return None

        if policy is AllocationPolicy.SHORT_PRIORITY:
            return RequestClass.INTERACTIVE if not iq.empty else RequestClass.HEAVY

        if policy is AllocationPolicy.FAIR_QUEUING_RR:
            preferred = _other(self._last_emitted) if self._last_emitted else self.turn
            if self.queues[preferred].empty:
                preferred = _other(preferred)
            return preferred

        quantum = self.config.quantum
        for _ in range(_VISIT_CAP):
            q = self.queues[self.turn]
            if q.empty:
                q.deficit = 0.0
                peer = self.queues[_other(self.turn)]
                if peer.empty:
                    return None
                # Borrowing: the idle class's opportunity goes to the peer,
                # one emission at a time; the turn stays with the idle owner.
                if peer.deficit >= peer.eligible_cost():
                    return peer.cls
                peer.deficit += quantum * self.effective_weight(peer.cls, severity)
                continue
            if q.deficit >= q.eligible_cost():
                return q.cls
            if not self._topped_up:
                # One quantum per visit; within a visit the class emits while
                # its deficit lasts, then the turn passes.
                q.deficit += quantum * self.effective_weight(q.cls, severity)
                self._topped_up = True
                if q.deficit >= q.eligible_cost():
                    return q.cls
            self.turn = _other(self.turn)
            self._topped_up = False
        raise AssertionError("allocator visit cap exceeded; quantum must be positive")

    def note_emit(self, cls: RequestClass, request_id: int, cost: float) -> None:
        """Record an emission chosen by the scheduler."""
        self._last_emitted = cls
        if self.config.policy is AllocationPolicy.ADAPTIVE_DRR:
            on_emit(self.queues[cls], request_id, cost)
        else:
            self.queues[cls].remove(request_id)

    def feasible_budget(self, cls: RequestClass) -> float:
        """Cost ceiling for candidate selection within the chosen class."""
        if self.config.policy is AllocationPolicy.ADAPTIVE_DRR:
            return self.queues[cls].deficit
        return float("inf")


def _other(cls: RequestClass) -> RequestClass:
    return (
        RequestClass.HEAVY if cls is RequestClass.INTERACTIVE else RequestClass.INTERACTIVE
    )
