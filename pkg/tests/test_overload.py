from __future__ import annotations

import pytest

from clientsched.overload import (
    Action,
    BucketPolicy,
    OverloadConfig,
    SeverityWeights,
    SignalTracker,
    backoff,
    decide,
    severity,
)
from clientsched.provider import Observables
from clientsched.workload import Bucket, Request


def make_request(bucket: Bucket, attempts: int = 0) -> Request:
    tokens = {Bucket.SHORT: 32, Bucket.MEDIUM: 128, Bucket.LONG: 512, Bucket.XLONG: 2048}
    req = Request(
        id=0, bucket=bucket, true_tokens=tokens[bucket], arrival_ms=0.0, deadline_ms=1e6
    )
    req.defer_attempts = attempts
    return req


def test_severity_zero_signals():
    assert severity(Observables(0.0, 0.0, 0.0), SeverityWeights()) == 0.0


def test_severity_saturated_signals():
    assert severity(Observables(1.0, 1.0, 1.0), SeverityWeights()) == pytest.approx(1.0)


def test_severity_is_convex_combination():
    for weights in (SeverityWeights(), SeverityWeights(1, 2, 3), SeverityWeights(0.2, 0.2, 0.2)):
        assert severity(Observables(0.5, 0.5, 0.5), weights) == pytest.approx(0.5)


def test_severity_normalizes_weights():
    obs = Observables(1.0, 0.0, 0.0)
    assert severity(obs, SeverityWeights(2.0, 1.0, 1.0)) == pytest.approx(0.5)


def test_severity_rejects_degenerate_weights():
    with pytest.raises(ValueError):
        severity(Observables(0.5, 0.5, 0.5), SeverityWeights(0.0, 0.0, 0.0))


def test_short_always_admitted():
    config = OverloadConfig()
    for policy in BucketPolicy:
        decision = decide(make_request(Bucket.SHORT), 0.99, OverloadConfig(policy=policy))
        assert decision.action is Action.ADMIT


def test_xlong_rejected_at_mid_tier_threshold():
    decision = decide(make_request(Bucket.XLONG), 0.70, OverloadConfig())
    assert decision.action is Action.REJECT


def test_long_defers_in_mid_band():
    decision = decide(make_request(Bucket.LONG), 0.70, OverloadConfig())
    assert decision.action is Action.DEFER
    assert decision.backoff_ms > 0


def test_medium_defers_under_uniform_mild():
    decision = decide(
        make_request(Bucket.MEDIUM), 0.70, OverloadConfig(policy=BucketPolicy.UNIFORM_MILD)
    )
    assert decision.action is Action.DEFER


def _expected_action(policy: BucketPolicy, bucket: Bucket, sev: float) -> Action:
    # Independent statement of the decision table: per-policy bucket weights,
    # weight 0 admits, weight 1 rejects at t3, weight 2 rejects at t2,
    # both defer at t1, short is untouchable.
    weights = {
        BucketPolicy.COST_LADDER: {"medium": 0, "long": 1, "xlong": 2},
        BucketPolicy.UNIFORM_MILD: {"medium": 1, "long": 1, "xlong": 1},
        BucketPolicy.UNIFORM_HARSH: {"medium": 2, "long": 2, "xlong": 2},
        BucketPolicy.REVERSE: {"medium": 0, "long": 2, "xlong": 1},
    }
    if bucket is Bucket.SHORT:
        return Action.ADMIT
    weight = weights[policy][bucket.value]
    if weight == 0:
        return Action.ADMIT
    reject_at = 0.65 if weight == 2 else 0.80
    if sev >= reject_at:
        return Action.REJECT
    if sev >= 0.45:
        return Action.DEFER
    return Action.ADMIT


def test_decision_table_exhaustive():
    grid = (0.0, 0.44, 0.45, 0.64, 0.65, 0.79, 0.80, 1.0)
    for policy in BucketPolicy:
        config = OverloadConfig(policy=policy)
        for bucket in Bucket:
            for sev in grid:
                decision = decide(make_request(bucket), sev, config)
                expected = _expected_action(policy, bucket, sev)
                assert decision.action is expected, (policy, bucket, sev)
                assert decision.severity_at_decision == sev


def test_action_monotone_in_severity():
    order = {Action.ADMIT: 0, Action.DEFER: 1, Action.REJECT: 2}
    for policy in BucketPolicy:
        config = OverloadConfig(policy=policy)
        for bucket in Bucket:
            last = -1
            for i in range(101):
                decision = decide(make_request(bucket), i / 100.0, config)
                assert order[decision.action] >= last
                last = order[decision.action]


def test_backoff_base_case():
    assert backoff(1, base_ms=500.0) == 500.0


def test_backoff_doubles_then_caps():
    assert backoff(4, base_ms=500.0, cap_ms=8_000.0) == 4_000.0
    assert backoff(10, base_ms=500.0, cap_ms=8_000.0) == 8_000.0


def test_backoff_rejects_zero_attempt():
    with pytest.raises(ValueError):
        backoff(0)


def test_defer_backoff_grows_with_attempts():
    config = OverloadConfig()
    first = decide(make_request(Bucket.LONG, attempts=0), 0.5, config)
    second = decide(make_request(Bucket.LONG, attempts=1), 0.5, config)
    assert second.backoff_ms == 2 * first.backoff_ms


def test_tracker_tail_signal_decays_with_time():
    config = OverloadConfig()
    tracker = SignalTracker(config, capacity=8)
    tracker.on_completion(1_000.0, 6_000.0)
    hot = tracker.observe(0, now=1_000.0)
    assert hot.tail_latency_ratio == pytest.approx(0.75)
    cold = tracker.observe(0, now=1_000.0 + config.tail_horizon_ms + 1)
    assert cold.tail_latency_ratio == 0.0


def test_tracker_idle_severity_below_defer_threshold():
    # Queue weight bounds idle severity; a drained idle client must re-admit.
    config = OverloadConfig()
    tracker = SignalTracker(config, capacity=8)
    tracker.on_arrival(1e9)  # absurd backlog, fully clamped
    obs = tracker.observe(0, now=config.tail_horizon_ms * 10)
    assert severity(obs, config.weights) < config.t1


def test_tracker_queue_pressure_counts_unshipped_work():
    config = OverloadConfig(pressure_ref_tokens=1_000.0)
    tracker = SignalTracker(config, capacity=8)
    tracker.on_arrival(600.0)
    tracker.on_arrival(600.0)
    assert tracker.observe(0, now=0.0).queue_pressure == 1.0
    tracker.on_shipped(600.0)
    assert tracker.observe(0, now=0.0).queue_pressure == pytest.approx(0.6)


def test_tracker_load_clamped_above_capacity():
    tracker = SignalTracker(OverloadConfig(), capacity=8)
    assert tracker.observe(100, now=0.0).provider_load == 1.0
