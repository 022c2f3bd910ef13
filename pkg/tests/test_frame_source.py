import numpy as np
import pytest

from src.stream_cache.errors import ConfigError
from src.stream_cache.services.frame_source import synth_frame, synth_query


def test_same_inputs_give_same_vectors(stream_cfg):
    a = synth_frame(0, 5, stream_cfg)
    b = synth_frame(0, 5, stream_cfg)
    np.testing.assert_array_equal(a.key_raw, b.key_raw)
    np.testing.assert_array_equal(a.value, b.value)
    assert a.key_raw.shape == (stream_cfg.head_dim,)


def test_seed_and_index_change_vectors(stream_cfg):
    base = synth_frame(0, 5, stream_cfg)
    assert not np.array_equal(base.key_raw, synth_frame(1, 5, stream_cfg).key_raw)
    assert not np.array_equal(base.key_raw, synth_frame(0, 6, stream_cfg).key_raw)


def test_query_stream_is_separate_from_keys(stream_cfg):
    assert not np.array_equal(synth_query(0, 5, stream_cfg), synth_frame(0, 5, stream_cfg).key_raw)


def test_frames_are_read_only(stream_cfg):
    frame = synth_frame(0, 1, stream_cfg)
    with pytest.raises(ValueError):
        frame.key_raw[0] = 1.0


def test_negative_index_rejected(stream_cfg):
    with pytest.raises(ValueError):
        synth_frame(0, -1, stream_cfg)


def test_negative_seed_rejected(stream_cfg):
    with pytest.raises(ConfigError, match="seed < 0"):
        synth_frame(-1, 0, stream_cfg)
    with pytest.raises(ConfigError):
        synth_query(-3, 2, stream_cfg)


def test_repeated_draws_are_independent_copies(stream_cfg):
    query = synth_query(0, 7, stream_cfg)
    expected = query.copy()
    query += 1.0
    np.testing.assert_array_equal(synth_query(0, 7, stream_cfg), expected)
