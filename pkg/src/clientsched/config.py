"""Scenario configuration: strategy composition knobs, validation, hashing.

A scenario is fully serializable; its flattened key=value form feeds both the
reproducibility stamp (sha256 prefix recorded in every output row) and the
human-editable config file format (`key = value` lines, `#` comments).
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field, replace

from .allocation import AllocationConfig, AllocationPolicy
from .ordering import OrderingConfig
from .overload import BucketPolicy, OverloadConfig, SeverityWeights
from .provider import ProviderState
from .workload import (
    FAIRNESS_MIX,
    MIX_PROPORTIONS,
    Congestion,
    InformationLevel,
    Mix,
    WorkloadConfig,
)


class Strategy(enum.Enum):
    DIRECT_NAIVE = "direct_naive"
    QUOTA_TIERED = "quota_tiered"
    ADAPTIVE_DRR = "adaptive_drr"
    FINAL_OLC = "final_adrr_olc"
    FAIR_QUEUING_RR = "fair_queuing_rr"
    SHORT_PRIORITY = "short_priority"


# Strategies that stop at the run horizon instead of draining to quiescence.
HORIZON_CUT_STRATEGIES = frozenset({Strategy.DIRECT_NAIVE, Strategy.QUOTA_TIERED})

# Named workload mixes accepted by the harness; "heavy70" is the 70% long/xlong
# mix used by the fairness comparison.
MIXES: dict[str, tuple[float, float, float, float]] = {
    Mix.BALANCED.value: MIX_PROPORTIONS[Mix.BALANCED],
    Mix.HEAVY_DOMINATED.value: MIX_PROPORTIONS[Mix.HEAVY_DOMINATED],
    "heavy70": FAIRNESS_MIX,
}

PHYSICS_MODES = ("scaled", "calibrated")


@dataclass(frozen=True)
class ScenarioConfig:
    strategy: Strategy = Strategy.FINAL_OLC
    mix: str = Mix.BALANCED.value
    congestion: Congestion = Congestion.HIGH
    level: InformationLevel = InformationLevel.COARSE
    noise_l: float = 0.0
    seed: int = 0
    n: int = 200
    physics: str = "scaled"
    # Horizon applies to horizon-cut strategies (naive, quota); structured
    # strategies drain to quiescence.  Scaled-physics milliseconds.
    horizon_ms: float = 20_000.0
    # Static per-class isolation share for the quota baseline.
    quota_interactive_share: float = 0.6
    capacity: int = 8
    alpha: float = 2.0
    timeout_ms: float = 120_000.0
    allocation: AllocationConfig = field(default_factory=AllocationConfig)
    ordering: OrderingConfig = field(default_factory=OrderingConfig)
    overload: OverloadConfig = field(default_factory=OverloadConfig)
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    trace_path: str = ""

    def time_scale(self) -> float:
        if self.physics == "calibrated":
            return 18.7 / 0.5
        return 1.0

    def provider_state(self) -> ProviderState:
        base = ProviderState.calibrated() if self.physics == "calibrated" else ProviderState.scaled()
        return replace(
            base,
            capacity=self.capacity,
            alpha=self.alpha,
            timeout_ms=self.timeout_ms * self.time_scale(),
        )

    def workload_config(self) -> WorkloadConfig:
        state = self.provider_state()
        return replace(
            self.workload,
            n=self.n,
            ref_capacity=state.capacity,
            ref_base_ms=state.base_ms,
            ref_per_token_ms=state.per_token_ms,
            time_scale=self.time_scale(),
        )

    def mix_proportions(self) -> tuple[float, float, float, float]:
        return MIXES[self.mix]

    def flatten(self) -> dict[str, str]:
        """Stable flat key=value view used for hashing and file round-trips."""
        out: dict[str, str] = {
            "run.strategy": self.strategy.value,
            "run.mix": self.mix,
            "run.congestion": self.congestion.value,
            "run.level": self.level.value,
            "run.noise_l": _fmt(self.noise_l),
            "run.seed": str(self.seed),
            "run.n": str(self.n),
            "run.physics": self.physics,
            "run.horizon_ms": _fmt(self.horizon_ms),
            "run.quota_interactive_share": _fmt(self.quota_interactive_share),
            "run.capacity": str(self.capacity),
            "run.alpha": _fmt(self.alpha),
            "run.timeout_ms": _fmt(self.timeout_ms),
            "run.trace": self.trace_path,
            "allocation.policy": self.allocation.policy.value,
            "allocation.quantum": _fmt(self.allocation.quantum),
            "allocation.weights": f"{_fmt(self.allocation.weight_interactive)}/"
            f"{_fmt(self.allocation.weight_heavy)}",
            "allocation.gamma": _fmt(self.allocation.gamma),
            "ordering.w1": _fmt(self.ordering.w1),
            "ordering.w2": _fmt(self.ordering.w2),
            "ordering.w3": _fmt(self.ordering.w3),
            "ordering.ref": _fmt(self.ordering.ref),
            "ordering.fifo_heavy": str(self.ordering.fifo_heavy).lower(),
            "overload.policy": self.overload.policy.value,
            "overload.t1": _fmt(self.overload.t1),
            "overload.t2": _fmt(self.overload.t2),
            "overload.t3": _fmt(self.overload.t3),
            "overload.weights": f"{_fmt(self.overload.weights.w_load)}/"
            f"{_fmt(self.overload.weights.w_queue)}/{_fmt(self.overload.weights.w_tail)}",
            "overload.backoff_base": _fmt(self.overload.backoff_base_ms),
            "overload.backoff_cap": _fmt(self.overload.backoff_cap_ms),
            "overload.pressure_ref": _fmt(self.overload.pressure_ref_tokens),
            "overload.tail_target": _fmt(self.overload.tail_target_ms),
            "overload.tail_horizon": _fmt(self.overload.tail_horizon_ms),
            "workload.rho_medium": _fmt(self.workload.rho_medium),
            "workload.rho_high": _fmt(self.workload.rho_high),
        }
        for bucket, deadline in sorted(
            self.workload.deadlines_ms.items(), key=lambda kv: kv[0].value
        ):
            out[f"workload.deadline_{bucket.value}_ms"] = _fmt(deadline)
        return out

    def config_hash(self) -> str:
        flat = self.flatten()
        blob = ";".join(f"{k}={flat[k]}" for k in sorted(flat))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def _fmt(value: float) -> str:
    return repr(float(value))


def validate_config(config: ScenarioConfig) -> list[str]:
    """Return the full list of violations; an empty list means valid."""
    errors: list[str] = []
    if config.mix not in MIXES:
        errors.append(f"unknown mix {config.mix!r}; expected one of {sorted(MIXES)}")
    if config.physics not in PHYSICS_MODES:
        errors.append(f"unknown physics mode {config.physics!r}; expected {PHYSICS_MODES}")
    if config.n < 1:
        errors.append(f"run.n must be >= 1, got {config.n}")
    if config.capacity < 1:
        errors.append(f"run.capacity must be >= 1, got {config.capacity}")
    if config.horizon_ms <= 0:
        errors.append(f"run.horizon_ms must be positive, got {config.horizon_ms}")
    if config.timeout_ms <= 0:
        errors.append(f"run.timeout_ms must be positive, got {config.timeout_ms}")
    if config.alpha < 0:
        errors.append(f"run.alpha must be >= 0, got {config.alpha}")
    if not 0.0 < config.quota_interactive_share < 1.0:
        errors.append(
            f"run.quota_interactive_share must be in (0, 1), got {config.quota_interactive_share}"
        )
    if not 0.0 <= config.noise_l < 1.0:
        errors.append(f"run.noise_l must be in [0, 1), got {config.noise_l}")

    ov = config.overload
    if not 0.0 < ov.t1 < ov.t2 < ov.t3 < 1.0:
        errors.append(
            f"overload thresholds must satisfy 0 < t1 < t2 < t3 < 1, got "
            f"t1={ov.t1}, t2={ov.t2}, t3={ov.t3}"
        )
    w = ov.weights
    if min(w.w_load, w.w_queue, w.w_tail) < 0 or (w.w_load + w.w_queue + w.w_tail) <= 0:
        errors.append("overload severity weights must be non-negative with positive sum")
    if ov.backoff_base_ms <= 0 or ov.backoff_cap_ms < ov.backoff_base_ms:
        errors.append("overload backoff must satisfy 0 < base <= cap")
    if ov.pressure_ref_tokens <= 0 or ov.tail_target_ms <= 0 or ov.tail_horizon_ms <= 0:
        errors.append("overload signal normalizers must be positive")
    total_w = w.w_load + w.w_queue + w.w_tail
    if total_w > 0 and ov.t1 <= w.w_queue / total_w:
        errors.append(
            "overload.t1 must exceed the normalized queue weight, or an idle "
            "client could defer forever"
        )

    al = config.allocation
    if al.quantum <= 0:
        errors.append(f"allocation.quantum must be positive, got {al.quantum}")
    if al.weight_interactive <= 0 or al.weight_heavy <= 0:
        errors.append("allocation weights must be positive")
    if al.gamma < 0:
        errors.append(f"allocation.gamma must be >= 0, got {al.gamma}")

    od = config.ordering
    if min(od.w1, od.w2, od.w3) < 0:
        errors.append("ordering weights must be >= 0")
    if od.ref <= 0:
        errors.append(f"ordering.ref must be positive, got {od.ref}")

    wl = config.workload
    if wl.rho_medium <= 0 or wl.rho_high <= 0:
        errors.append("workload offered loads must be positive")
    if any(d <= 0 for d in wl.deadlines_ms.values()):
        errors.append("workload deadlines must be positive")
    return errors


def parse_config_file(path: str) -> dict[str, str]:
    """Read `key = value` lines; `#` starts a comment, blank lines ignored."""
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}: line {lineno}: expected 'key = value', got {raw!r}")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def apply_overrides(config: ScenarioConfig, overrides: dict[str, str]) -> ScenarioConfig:
    """Apply flat key=value overrides to a scenario; unknown keys raise."""
    unknown = [key for key in overrides if key not in _SETTERS]
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    for key, value in overrides.items():
        config = _SETTERS[key](config, value)
    return config


def _pair(value: str) -> tuple[float, ...]:
    return tuple(float(part) for part in value.split("/"))


def _set_deadline(config: ScenarioConfig, bucket_name: str, value: str) -> ScenarioConfig:
    from .workload import Bucket

    deadlines = dict(config.workload.deadlines_ms)
    deadlines[Bucket(bucket_name)] = float(value)
    return replace(config, workload=replace(config.workload, deadlines_ms=deadlines))


_SETTERS = {
    "run.strategy": lambda c, v: replace(c, strategy=Strategy(v)),
    "run.mix": lambda c, v: replace(c, mix=v),
    "run.congestion": lambda c, v: replace(c, congestion=Congestion(v)),
    "run.level": lambda c, v: replace(c, level=InformationLevel(v)),
    "run.noise_l": lambda c, v: replace(c, noise_l=float(v)),
    "run.seed": lambda c, v: replace(c, seed=int(v)),
    "run.n": lambda c, v: replace(c, n=int(v)),
    "run.physics": lambda c, v: replace(c, physics=v),
    "run.horizon_ms": lambda c, v: replace(c, horizon_ms=float(v)),
    "run.quota_interactive_share": lambda c, v: replace(c, quota_interactive_share=float(v)),
    "run.capacity": lambda c, v: replace(c, capacity=int(v)),
    "run.alpha": lambda c, v: replace(c, alpha=float(v)),
    "run.timeout_ms": lambda c, v: replace(c, timeout_ms=float(v)),
    "run.trace": lambda c, v: replace(c, trace_path=v),
    "allocation.policy": lambda c, v: replace(
        c, allocation=replace(c.allocation, policy=AllocationPolicy(v))
    ),
    "allocation.quantum": lambda c, v: replace(
        c, allocation=replace(c.allocation, quantum=float(v))
    ),
    "allocation.weights": lambda c, v: replace(
        c,
        allocation=replace(
            c.allocation, weight_interactive=_pair(v)[0], weight_heavy=_pair(v)[1]
        ),
    ),
    "allocation.gamma": lambda c, v: replace(c, allocation=replace(c.allocation, gamma=float(v))),
    "ordering.w1": lambda c, v: replace(c, ordering=replace(c.ordering, w1=float(v))),
    "ordering.w2": lambda c, v: replace(c, ordering=replace(c.ordering, w2=float(v))),
    "ordering.w3": lambda c, v: replace(c, ordering=replace(c.ordering, w3=float(v))),
    "ordering.ref": lambda c, v: replace(c, ordering=replace(c.ordering, ref=float(v))),
    "ordering.fifo_heavy": lambda c, v: replace(
        c, ordering=replace(c.ordering, fifo_heavy=v.lower() in ("1", "true", "yes"))
    ),
    "overload.policy": lambda c, v: replace(
        c, overload=replace(c.overload, policy=BucketPolicy(v))
    ),
    "overload.t1": lambda c, v: replace(c, overload=replace(c.overload, t1=float(v))),
    "overload.t2": lambda c, v: replace(c, overload=replace(c.overload, t2=float(v))),
    "overload.t3": lambda c, v: replace(c, overload=replace(c.overload, t3=float(v))),
    "overload.weights": lambda c, v: replace(
        c,
        overload=replace(
            c.overload,
            weights=SeverityWeights(_pair(v)[0], _pair(v)[1], _pair(v)[2]),
        ),
    ),
    "overload.backoff_base": lambda c, v: replace(
        c, overload=replace(c.overload, backoff_base_ms=float(v))
    ),
    "overload.backoff_cap": lambda c, v: replace(
        c, overload=replace(c.overload, backoff_cap_ms=float(v))
    ),
    "overload.pressure_ref": lambda c, v: replace(
        c, overload=replace(c.overload, pressure_ref_tokens=float(v))
    ),
    "overload.tail_target": lambda c, v: replace(
        c, overload=replace(c.overload, tail_target_ms=float(v))
    ),
    "overload.tail_horizon": lambda c, v: replace(
        c, overload=replace(c.overload, tail_horizon_ms=float(v))
    ),
    "workload.rho_medium": lambda c, v: replace(
        c, workload=replace(c.workload, rho_medium=float(v))
    ),
    "workload.rho_high": lambda c, v: replace(c, workload=replace(c.workload, rho_high=float(v))),
    "workload.deadline_short_ms": lambda c, v: _set_deadline(c, "short", v),
    "workload.deadline_medium_ms": lambda c, v: _set_deadline(c, "medium", v),
    "workload.deadline_long_ms": lambda c, v: _set_deadline(c, "long", v),
    "workload.deadline_xlong_ms": lambda c, v: _set_deadline(c, "xlong", v),
}

# Every flattened key must be settable so a dumped config round-trips.
_ROUNDTRIP_CHECK = set(ScenarioConfig().flatten()) - set(_SETTERS)
assert not _ROUNDTRIP_CHECK, f"flatten/setters mismatch: {_ROUNDTRIP_CHECK}"
