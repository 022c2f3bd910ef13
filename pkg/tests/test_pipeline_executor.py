import threading

import pytest

from src.stream_cache.models.pipeline import PipelineConfig
from src.stream_cache.services.pipeline_executor import InFlightWindow, ReorderBuffer, run_threaded


def test_reorder_buffer_releases_in_sequence():
    buffer = ReorderBuffer()
    assert buffer.push(2, "c") == []
    assert buffer.push(1, "b") == []
    assert buffer.push(0, "a") == [(0, "a"), (1, "b"), (2, "c")]
    assert len(buffer) == 0
    assert buffer.push(3, "d") == [(3, "d")]


def test_in_flight_window_blocks_at_depth():
    window = InFlightWindow(1)
    assert window.acquire() == (0, False)

    result = []
    waiter = threading.Thread(target=lambda: result.append(window.acquire()))
    waiter.start()
    waiter.join(timeout=0.05)
    assert waiter.is_alive()

    window.release()
    waiter.join(timeout=2)
    assert result == [(1, True)]
    assert window.max_count == 1


def test_threads_emit_in_order_under_jitter():
    cfg = PipelineConfig(
        dit_latency_ms=20, vae_latency_ms=25, write_latency_ms=2,
        queue_depth=2, vae_jitter_ms=30, jitter_seed=3,
    )
    report = run_threaded(cfg, 60, time_scale=1e-5)
    assert report.emission_indices == list(range(60))
    assert report.max_queue_occupancy <= 2
    assert report.snapshots_stable
    assert all(occupancy == 2 for occupancy in report.stall_occupancies)
    assert len(report.submit_occupancies) == 60


def test_single_slot_executor():
    report = run_threaded(PipelineConfig(queue_depth=1), 10, time_scale=1e-5)
    assert report.emission_indices == list(range(10))
    assert report.max_queue_occupancy == 1


def test_closing_the_window_wakes_a_blocked_producer():
    window = InFlightWindow(1)
    window.acquire()

    outcome = []

    def blocked():
        try:
            window.acquire()
            outcome.append("acquired")
        except Exception:
            outcome.append("refused")

    waiter = threading.Thread(target=blocked)
    waiter.start()
    waiter.join(timeout=0.05)
    assert waiter.is_alive()

    window.close()
    waiter.join(timeout=2)
    assert not waiter.is_alive()
    assert outcome == ["refused"]


def _run_in_background(cfg, n_chunks):
    outcome = {}

    def run():
        try:
            outcome["report"] = run_threaded(cfg, n_chunks, time_scale=1e-5)
        except Exception as e:
            outcome["error"] = e

    thread = threading.Thread(target=run, daemon=True)
    thread.start()
    thread.join(timeout=10)
    return thread, outcome


@pytest.mark.parametrize("stage", ["decoder", "writer"])
def test_failing_stage_stops_the_pipeline(monkeypatch, stage):
    def fail(*args, **kwargs):
        raise RuntimeError(f"{stage} failed")

    if stage == "decoder":
        monkeypatch.setattr(InFlightWindow, "release", fail)
    else:
        monkeypatch.setattr(ReorderBuffer, "push", fail)

    thread, outcome = _run_in_background(PipelineConfig(queue_depth=1), 20)
    assert not thread.is_alive()
    assert "report" not in outcome
    assert str(outcome["error"]) == f"{stage} failed"
