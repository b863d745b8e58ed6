from __future__ import annotations

import pytest

from clientsched.provider import (
    Provider,
    ProviderState,
    SimClock,
    fit_calibration,
    read_calibration_csv,
    service_time,
)
from clientsched.workload import Congestion, Mix, RequestState, generate_stream

# Bucket-mean calibration points: (mean_tokens, mean_latency_ms, count).
CALIBRATION_POINTS = [(155.0, 4916.0, 3.0), (670.0, 14968.0, 5.0), (2839.0, 57251.0, 10.0)]
# Frozen output of the independent weighted-least-squares oracle (closed-form
# sums cross-checked against numpy.polyfit with sqrt-count weights).
ORACLE_SLOPE = 19.496653363667
ORACLE_INTERCEPT = 1900.459912395418


def _state(**kw) -> ProviderState:
    defaults = dict(capacity=8, base_ms=50.0, per_token_ms=0.5, alpha=2.0, timeout_ms=120_000.0)
    defaults.update(kw)
    return ProviderState(**defaults)


def test_service_time_unloaded():
    assert service_time(100, 0, _state()) == pytest.approx(100.0)


def test_service_time_no_slowdown_at_capacity_boundary():
    state = _state()
    assert service_time(100, state.capacity, state) == pytest.approx(100.0)


def test_service_time_slowdown_above_capacity():
    state = _state()
    # excess = (12 - 8) / 8 = 0.5; factor = 1 + 2 * 0.5 = 2
    assert service_time(100, 12, state) == pytest.approx(200.0)


def test_service_time_calibrated_matches_measured_xlong_mean():
    state = ProviderState.calibrated()
    predicted = service_time(2839, 0, state)
    assert predicted == pytest.approx(3294 + 18.7 * 2839)
    assert abs(predicted - 57_251) < 16_064  # within one std of the measured mean


def test_service_time_rejects_nonpositive_tokens():
    with pytest.raises(ValueError):
        service_time(0, 0, _state())


def test_service_time_monotone_in_both_arguments():
    state = _state()
    for inflight in range(0, 32, 4):
        values = [service_time(t, inflight, state) for t in range(1, 2000, 97)]
        assert values == sorted(values)
    for tokens in (1, 64, 512, 4096):
        values = [service_time(tokens, i, state) for i in range(0, 64)]
        assert values == sorted(values)


def _mk_request(rid: int, tokens: int):
    stream = generate_stream(Mix.BALANCED, Congestion.MEDIUM, 1, seed=rid)
    req = stream[0]
    req.true_tokens = tokens
    return req


def test_dispatch_schedules_completion():
    clock = SimClock()
    provider = Provider(_state(), clock)
    req = _mk_request(0, 100)
    done = []
    provider.dispatch(req, at=req.arrival_ms, on_done=lambda r, t: done.append((r.id, t)))
    assert req.state is RequestState.IN_FLIGHT
    clock.run()
    assert req.state is RequestState.COMPLETED
    assert done == [(req.id, req.arrival_ms + 100.0)]


def test_dispatch_times_out_when_service_exceeds_timeout():
    clock = SimClock()
    provider = Provider(_state(base_ms=0.0, per_token_ms=100.0, timeout_ms=120_000.0), clock)
    req = _mk_request(1, 2000)  # service 200 000 ms > timeout
    provider.dispatch(req, at=req.arrival_ms, on_done=lambda r, t: None)
    clock.run()
    assert req.state is RequestState.TIMED_OUT
    assert req.completion_ms == pytest.approx(req.arrival_ms + 120_000.0)


def test_same_tick_events_pop_in_insertion_order():
    clock = SimClock()
    order = []
    clock.push(5.0, lambda t: order.append("a"))
    clock.push(5.0, lambda t: order.append("b"))
    clock.push(5.0, lambda t: order.append("c"))
    clock.run()
    assert order == ["a", "b", "c"]


def test_clock_rejects_past_events():
    clock = SimClock()
    clock.push(10.0, lambda t: None)
    clock.step()
    with pytest.raises(ValueError):
        clock.push(5.0, lambda t: None)


def test_event_order_determinism():
    def trace() -> list[int]:
        clock = SimClock()
        seen: list[int] = []
        for i, at in enumerate([3.0, 1.0, 3.0, 2.0, 1.0]):
            clock.push(at, lambda t, i=i: seen.append(i))
        clock.run()
        return seen

    assert trace() == trace() == [1, 4, 3, 0, 2]


def test_fit_calibration_matches_frozen_oracle():
    slope, intercept, r2 = fit_calibration(CALIBRATION_POINTS)
    assert slope == pytest.approx(ORACLE_SLOPE, rel=1e-6)
    assert intercept == pytest.approx(ORACLE_INTERCEPT, rel=1e-6)
    assert r2 > 0.99


def test_fit_calibration_slope_near_published_per_token_cost():
    slope, intercept, _ = fit_calibration(CALIBRATION_POINTS)
    assert abs(slope - 18.7) / 18.7 < 0.15
    assert intercept > 0


def test_fit_calibration_exact_line():
    slope, intercept, r2 = fit_calibration([(0.0, 0.0, 1.0), (1.0, 1.0, 1.0)])
    assert slope == pytest.approx(1.0)
    assert intercept == pytest.approx(0.0, abs=1e-12)
    assert r2 == pytest.approx(1.0)


def test_fit_calibration_rejects_degenerate_inputs():
    with pytest.raises(ValueError):
        fit_calibration([(1.0, 2.0, 3.0)])
    with pytest.raises(ValueError):
        fit_calibration([(5.0, 1.0, 1.0), (5.0, 2.0, 1.0)])


def test_read_calibration_csv_roundtrip():
    from clientsched.harness import default_calibration_path

    points = read_calibration_csv(default_calibration_path())
    assert points == CALIBRATION_POINTS
