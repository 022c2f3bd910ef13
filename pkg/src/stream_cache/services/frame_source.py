"""
Deterministic synthetic latent frames for rollouts and tests
"""

from functools import lru_cache
from typing import Tuple

import numpy as np

from src.stream_cache.errors import ConfigError
from src.stream_cache.models.stream import LatentFrame, StreamConfig

# 乱数ストリームの識別子
_FRAME_STREAM = 0
_QUERY_STREAM = 1


@lru_cache(maxsize=8192)
def _draw(seed: int, stream: int, abs_index: int, shape: Tuple[int, ...]) -> np.ndarray:
    # 同じ (seed, stream, abs_index) は何度引いても同じ値になる
    values = np.random.default_rng([seed, stream, abs_index]).standard_normal(shape)
    values.setflags(write=False)
    return values


def _check_indices(seed: int, abs_index: int) -> None:
    if seed < 0:
        raise ConfigError("seed < 0", f"seed={seed}")
    if abs_index < 0:
        raise ValueError(f"abs_index must be >= 0, got {abs_index}")


def synth_frame(seed: int, abs_index: int, cfg: StreamConfig) -> LatentFrame:
    """(seed, abs_index) から決定的に潜在フレームを生成"""
    _check_indices(seed, abs_index)
    key_raw, value = _draw(seed, _FRAME_STREAM, abs_index, (2, cfg.head_dim))
    return LatentFrame(abs_index=abs_index, key_raw=key_raw.copy(), value=value.copy())


def synth_query(seed: int, abs_index: int, cfg: StreamConfig) -> np.ndarray:
    """ターゲットフレームの回転前クエリ"""
    _check_indices(seed, abs_index)
    return _draw(seed, _QUERY_STREAM, abs_index, (cfg.head_dim,)).copy()
