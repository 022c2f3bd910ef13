import json

import numpy as np
import pytest

from src.stream_cache.errors import CacheOrderError, ConfigError, EmptyCacheError
from src.stream_cache.models.stream import PositionMode, StreamConfig
from src.stream_cache.services.frame_source import synth_frame, synth_query
from src.stream_cache.services.rope_cache import (
    KvCache,
    PositionAssignment,
    ablation_report,
    assign_positions,
    attend_decoupled,
    collect_position_stats,
    compute_delta,
    attend_frames,
    default_ablation_cases,
    rope_rotate,
    rotate_batch,
)


def filled_cache(cfg: StreamConfig, last: int, sliding: bool = True) -> KvCache:
    cache = KvCache(cfg, sliding=sliding)
    for i in range(last + 1):
        cache.insert(synth_frame(0, i, cfg))
    return cache


@pytest.mark.parametrize("p_t, cap, expected", [(5, 16, 0), (100, 16, 84), (16, 16, 0), (17, 16, 1)])
def test_compute_delta(p_t, cap, expected):
    assert compute_delta(p_t, cap) == expected


def test_compute_delta_rejects_negative_target():
    with pytest.raises(CacheOrderError):
        compute_delta(-1, 16)


class TestKvCache:
    def test_sink_is_never_evicted(self, stream_cfg):
        cache = filled_cache(stream_cfg, 99)
        assert cache.sink.abs_index == 0
        assert [f.abs_index for f in cache.recent] == list(range(93, 100))
        assert len(cache) == 8

    def test_insert_returns_oldest_non_sink(self, stream_cfg):
        cache = filled_cache(stream_cfg, 7)
        evicted = cache.insert(synth_frame(0, 8, stream_cfg))
        assert evicted.abs_index == 1
        assert cache.sink.abs_index == 0

    def test_no_eviction_before_window_fills(self, stream_cfg):
        cache = KvCache(stream_cfg)
        for i in range(8):
            assert cache.insert(synth_frame(0, i, stream_cfg)) is None

    @pytest.mark.parametrize("index", [99, 50])
    def test_out_of_order_insert_rejected(self, stream_cfg, index):
        cache = filled_cache(stream_cfg, 99)
        with pytest.raises(CacheOrderError):
            cache.insert(synth_frame(0, index, stream_cfg))

    def test_full_history_mode_keeps_everything(self, stream_cfg):
        cache = filled_cache(stream_cfg, 49, sliding=False)
        assert len(cache) == 50

    def test_invalid_config_rejected(self):
        with pytest.raises(ConfigError):
            KvCache(StreamConfig(k_recent=7, cap_c=6))

    def test_dump_json(self, stream_cfg):
        data = json.loads(filled_cache(stream_cfg, 99).dump_json())
        assert data["sink_indices"] == [0]
        assert data["recent_indices"] == list(range(93, 100))
        assert data["frames_held"] == 8


class TestAssignPositions:
    def test_before_cap_positions_are_absolute(self, stream_cfg):
        positions = assign_positions(filled_cache(stream_cfg, 4), 5)
        assert positions.delta == 0
        assert positions.local_of == {i: i for i in range(5)}
        assert positions.target_local == 5

    def test_at_cap_boundary(self, stream_cfg):
        positions = assign_positions(filled_cache(stream_cfg, 15), 16)
        assert positions.delta == 0
        assert [positions.local(i) for i in range(9, 16)] == list(range(9, 16))
        assert positions.target_local == 16

    def test_long_stream_is_clamped(self, stream_cfg):
        positions = assign_positions(filled_cache(stream_cfg, 99), 100)
        assert positions.delta == 84
        assert positions.local(0) == 0
        assert [positions.local(i) for i in range(93, 100)] == list(range(9, 16))
        assert positions.target_local == 16

    def test_smaller_cap(self):
        cfg = StreamConfig(cap_c=12)
        positions = assign_positions(filled_cache(cfg, 99), 100)
        assert positions.delta == 88
        assert [positions.local(i) for i in range(93, 100)] == list(range(5, 12))
        assert positions.target_local == 12
        assert positions.max_local() == 12

    def test_uncapped_mode_grows(self):
        cfg = StreamConfig(position_mode=PositionMode.UNCAPPED)
        positions = assign_positions(filled_cache(cfg, 99), 100)
        assert positions.delta == 0
        assert positions.target_local == 100
        assert positions.local(99) == 99

    def test_target_must_follow_cache(self, stream_cfg):
        cache = filled_cache(stream_cfg, 20)
        with pytest.raises(CacheOrderError):
            assign_positions(cache, 20)


class TestRotation:
    def test_position_zero_is_identity(self, stream_cfg):
        v = synth_query(0, 1, stream_cfg)
        np.testing.assert_allclose(rope_rotate(v, 0, stream_cfg), v)

    def test_rotation_preserves_norm(self, stream_cfg):
        v = synth_query(0, 2, stream_cfg)
        assert np.linalg.norm(rope_rotate(v, 13, stream_cfg)) == pytest.approx(np.linalg.norm(v))

    def test_dot_product_depends_on_relative_position(self, stream_cfg):
        q, k = synth_query(0, 3, stream_cfg), synth_frame(0, 3, stream_cfg).key_raw
        near = rope_rotate(q, 5, stream_cfg) @ rope_rotate(k, 3, stream_cfg)
        far = rope_rotate(q, 12, stream_cfg) @ rope_rotate(k, 10, stream_cfg)
        assert near == pytest.approx(far, abs=1e-10)

    def test_batch_matches_single(self, stream_cfg):
        vectors = np.stack([synth_frame(1, i, stream_cfg).key_raw for i in range(4)])
        batch = rotate_batch(vectors, [0, 3, 7, 16], stream_cfg)
        for row, (v, pos) in enumerate(zip(vectors, [0, 3, 7, 16])):
            np.testing.assert_allclose(batch[row], rope_rotate(v, pos, stream_cfg))

    def test_odd_dimension_rejected(self, stream_cfg):
        with pytest.raises(ConfigError):
            rope_rotate(np.ones(5), 1, stream_cfg)

    @pytest.mark.parametrize("a, b", [(3, 5), (16, 16), (0, 9), (40, 200)])
    def test_rotations_compose_additively(self, stream_cfg, a, b):
        v = synth_query(5, 1, stream_cfg)
        composed = rope_rotate(rope_rotate(v, a, stream_cfg), b, stream_cfg)
        np.testing.assert_allclose(composed, rope_rotate(v, a + b, stream_cfg), rtol=0, atol=1e-12)

    def test_table_and_direct_paths_agree(self, stream_cfg):
        v = synth_query(1, 1, stream_cfg)
        # 4096 以上を含むバッチは表を使わずに計算される
        direct = rotate_batch(np.stack([v, v]), [4095, 4096], stream_cfg)
        np.testing.assert_allclose(direct[0], rope_rotate(v, 4095, stream_cfg), rtol=0, atol=1e-12)

    def test_negative_position_inverts_rotation(self, stream_cfg):
        v = synth_query(1, 2, stream_cfg)
        back = rope_rotate(rope_rotate(v, 7, stream_cfg), -7, stream_cfg)
        np.testing.assert_allclose(back, v, rtol=0, atol=1e-12)


class TestAttendDecoupled:
    def test_scores_form_a_distribution(self, stream_cfg):
        cache = filled_cache(stream_cfg, 30)
        result = attend_decoupled(synth_query(0, 31, stream_cfg), 31, cache)
        assert result.scores.shape == (8,)
        assert result.scores.sum() == pytest.approx(1.0)
        values = np.stack([f.value for f in cache.frames()])
        np.testing.assert_allclose(result.output, result.scores @ values)
        assert result.abs_indices == (0, *range(24, 31))

    @pytest.mark.parametrize("last", [0, 5, 16, 30, 200])
    def test_scores_sum_to_one_tightly(self, stream_cfg, last):
        cache = filled_cache(stream_cfg, last)
        result = attend_decoupled(synth_query(3, last + 1, stream_cfg), last + 1, cache)
        assert abs(result.scores.sum() - 1.0) <= 1e-12

    def test_single_key_matching_query(self, stream_cfg):
        sink = synth_frame(0, 0, stream_cfg)
        positions = PositionAssignment(delta=0, local_of={0: 0}, target_local=0)
        result = attend_frames(sink.key_raw, [sink], positions, stream_cfg)
        assert result.scores.tolist() == [1.0]
        np.testing.assert_array_equal(result.output, sink.value)

        cache = KvCache(stream_cfg)
        cache.insert(sink)
        result = attend_decoupled(sink.key_raw, 1, cache)
        assert result.scores.tolist() == [1.0]
        np.testing.assert_array_equal(result.output, sink.value)

    def test_eviction_does_not_change_surviving_frames(self, stream_cfg):
        cache = filled_cache(stream_cfg, 30)
        query = synth_query(0, 31, stream_cfg)
        positions = assign_positions(cache, 31)
        oldest = cache.recent[0].abs_index
        survivors = [f for f in cache.frames() if f.abs_index != oldest]
        keys_before = {f.abs_index: f.key_raw.copy() for f in survivors}
        before = attend_frames(query, survivors, positions, stream_cfg)

        evicted = cache.insert(synth_frame(0, 31, stream_cfg))
        assert evicted.abs_index == oldest
        after_frames = [f for f in cache.frames() if f.abs_index in positions.local_of]
        after = attend_frames(query, after_frames, positions, stream_cfg)

        assert after.abs_indices == before.abs_indices
        np.testing.assert_array_equal(after.scores, before.scores)
        np.testing.assert_array_equal(after.output, before.output)
        for frame in after_frames:
            np.testing.assert_array_equal(frame.key_raw, keys_before[frame.abs_index])

    def test_empty_cache_rejected(self, stream_cfg):
        with pytest.raises(EmptyCacheError):
            attend_decoupled(synth_query(0, 0, stream_cfg), 0, KvCache(stream_cfg))

    def test_raw_keys_are_not_modified(self, stream_cfg):
        cache = filled_cache(stream_cfg, 30)
        before = [f.key_raw.copy() for f in cache.frames()]
        attend_decoupled(synth_query(0, 31, stream_cfg), 31, cache)
        for frame, key in zip(cache.frames(), before):
            np.testing.assert_array_equal(frame.key_raw, key)


class TestPositionGuarantees:
    def test_short_rollout(self, stream_cfg):
        stats = collect_position_stats(stream_cfg, 10_000)
        assert stats.max_local == 16
        assert stats.sink_always_zero
        assert stats.max_frames_held == 8
        assert stats.full_window_gaps_exact
        summary = stats.to_dict()
        assert (summary["min_recent_gap"], summary["max_recent_gap"]) == (1, 7)

    @pytest.mark.parametrize("cap", [12, 16])
    def test_positions_stay_under_each_cap(self, cap):
        stats = collect_position_stats(StreamConfig(cap_c=cap), 2_000)
        assert stats.max_local == cap

    @pytest.mark.slow
    def test_million_step_rollout(self, stream_cfg):
        stats = collect_position_stats(stream_cfg, 1_000_000)
        assert stats.steps == 1_000_000
        assert stats.max_local <= 16
        assert stats.sink_always_zero
        assert stats.max_frames_held <= 8
        assert stats.full_window_gaps_exact
        assert stats.recent_gaps == set(range(1, 8))


def test_ablation_report_contrasts_configurations(stream_cfg):
    rows = ablation_report(default_ablation_cases(stream_cfg), 500)
    by_label = {row["configuration"]: row for row in rows}

    assert by_label["no sliding, no cap"]["max_frames_held"] == 500
    assert by_label["kv=7, no cap"]["max_frames_held"] == 8
    assert by_label["kv=7, no cap"]["max_local"] == 500
    assert by_label["kv=7, cap=16"]["max_local"] == 16
    assert by_label["kv=7, cap=16"]["max_sink_distance"] == 16
    assert by_label["kv=4, cap=16"]["max_frames_held"] == 5
    assert by_label["kv=4, cap=16"]["max_recent_gap"] == 4
