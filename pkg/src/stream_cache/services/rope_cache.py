"""
Bounded local RoPE positions and the raw-key sliding KV-cache

Keys are cached without rotation. Every attention call assigns fresh local
positions (sink at 0, recent frames immediately below the target, everything
clamped to [0, cap_c]) and rotates the cached keys on the fly.
"""

import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Deque, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from src.stream_cache.config import validate_config
from src.stream_cache.errors import CacheOrderError, ConfigError, EmptyCacheError
from src.stream_cache.models.stream import LatentFrame, PositionMode, StreamConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PositionAssignment:
    """絶対インデックスからローカル位置への割り当て"""
    delta: int
    local_of: Dict[int, int]
    target_local: int

    def local(self, abs_index: int) -> int:
        return self.local_of[abs_index]

    def max_local(self) -> int:
        return max([self.target_local, *self.local_of.values()])


@dataclass(frozen=True)
class AttentionResult:
    """1ステップ分のアテンション結果"""
    abs_indices: Tuple[int, ...]
    scores: np.ndarray
    output: np.ndarray
    positions: PositionAssignment


def compute_delta(p_abs_t: int, cap_c: int) -> int:
    """δ = max(0, p_abs_t - C)"""
    if p_abs_t < 0:
        raise CacheOrderError(f"p_abs_t must be >= 0, got {p_abs_t}")
    return max(0, p_abs_t - cap_c)


class KvCache:
    """シンク + 直近リングバッファの生キーKVキャッシュ"""

    def __init__(self, cfg: StreamConfig, sliding: bool = True):
        self.cfg = validate_config(cfg)
        # sliding=False は全履歴を保持する（アブレーション用、メモリ無制限）
        self.sliding = sliding
        self._sinks: List[LatentFrame] = []
        self._recent: Deque[LatentFrame] = deque()
        self._last_index = -1

    def __len__(self) -> int:
        return len(self._sinks) + len(self._recent)

    @property
    def sink(self) -> Optional[LatentFrame]:
        return self._sinks[0] if self._sinks else None

    @property
    def sinks(self) -> Tuple[LatentFrame, ...]:
        return tuple(self._sinks)

    @property
    def recent(self) -> Tuple[LatentFrame, ...]:
        return tuple(self._recent)

    @property
    def last_index(self) -> int:
        return self._last_index

    def frames(self) -> List[LatentFrame]:
        """シンク → 直近の順で全フレーム"""
        return [*self._sinks, *self._recent]

    def insert(self, frame: LatentFrame) -> Optional[LatentFrame]:
        """フレームを追加し、窓からあふれた最古の非シンクフレームを返す"""
        if frame.abs_index <= self._last_index:
            raise CacheOrderError(
                f"out-of-order insert: abs_index {frame.abs_index} <= last {self._last_index}"
            )
        self._last_index = frame.abs_index

        if frame.abs_index < self.cfg.k_sink:
            self._sinks.append(frame)
            logger.debug(f"シンクフレームを設定: abs={frame.abs_index}")
            return None

        self._recent.append(frame)
        if self.sliding and len(self._recent) > self.cfg.k_recent:
            evicted = self._recent.popleft()
            logger.debug(f"フレームを追い出し: abs={evicted.abs_index} (挿入 abs={frame.abs_index})")
            return evicted
        return None

    def to_dict(self) -> Dict:
        return {
            "sink_present": self.sink is not None,
            "sink_indices": [f.abs_index for f in self._sinks],
            "recent_indices": [f.abs_index for f in self._recent],
            "frames_held": len(self),
            "sliding": self.sliding,
        }

    def dump_json(self) -> str:
        """CLI向けのデバッグ出力"""
        return json.dumps(self.to_dict())


def assign_positions(cache: KvCache, p_abs_t: int) -> PositionAssignment:
    """式(2): local = clamp(abs - δ, 0, C)、target = min(p_abs_t, C)"""
    if p_abs_t <= cache.last_index:
        raise CacheOrderError(
            f"target {p_abs_t} must be greater than every cached index (last {cache.last_index})"
        )

    cfg = cache.cfg
    if cfg.position_mode == PositionMode.UNCAPPED:
        # 上限なし: 絶対位置がそのまま使われる
        local_of = {f.abs_index: f.abs_index for f in cache.frames()}
        return PositionAssignment(delta=0, local_of=local_of, target_local=p_abs_t)

    cap = cfg.cap_c
    delta = compute_delta(p_abs_t, cap)
    local_of = {}
    for f in cache.frames():
        shifted = f.abs_index - delta
        local_of[f.abs_index] = 0 if shifted < 0 else (cap if shifted > cap else shifted)
    return PositionAssignment(delta=delta, local_of=local_of, target_local=min(p_abs_t, cap))


def _inverse_frequencies(head_dim: int, rope_base: float) -> np.ndarray:
    if head_dim % 2 != 0:
        raise ConfigError("head_dim odd", f"head_dim={head_dim}")
    half = head_dim // 2
    return rope_base ** (-2.0 * np.arange(half) / head_dim)


_TABLE_MIN_SIZE = 64
_TABLE_MAX_SIZE = 4096


@lru_cache(maxsize=64)
def _rotation_table(head_dim: int, rope_base: float, size: int) -> Tuple[np.ndarray, np.ndarray]:
    """位置 0..size-1 の cos / sin 表"""
    angles = np.arange(size, dtype=np.float64)[:, None] * _inverse_frequencies(head_dim, rope_base)[None, :]
    cos, sin = np.cos(angles), np.sin(angles)
    cos.setflags(write=False)
    sin.setflags(write=False)
    return cos, sin


def _cos_sin(positions: Sequence[int], head_dim: int, rope_base: float) -> Tuple[np.ndarray, np.ndarray]:
    index = np.asarray(positions)
    if index.size and index.dtype.kind in "iu" and 0 <= index.min() and index.max() < _TABLE_MAX_SIZE:
        size = _TABLE_MIN_SIZE
        while size <= index.max():
            size *= 2
        cos, sin = _rotation_table(head_dim, float(rope_base), size)
        return cos[index], sin[index]
    # 表の範囲外（負・非整数・上限なしの大きな位置）は直接計算する
    angles = index.astype(np.float64)[:, None] * _inverse_frequencies(head_dim, rope_base)[None, :]
    return np.cos(angles), np.sin(angles)


def rotate_batch(vectors: np.ndarray, positions: Sequence[int], cfg: StreamConfig) -> np.ndarray:
    """(n, d) のベクトルをそれぞれの位置で回転（入力は変更しない）"""
    vectors = np.asarray(vectors, dtype=np.float64)
    cos, sin = _cos_sin(positions, vectors.shape[-1], cfg.rope_base)
    half = vectors.shape[-1] // 2
    first, second = vectors[:, :half], vectors[:, half:]
    return np.concatenate([first * cos - second * sin, first * sin + second * cos], axis=-1)


def rope_rotate(v: np.ndarray, position: int, cfg: StreamConfig) -> np.ndarray:
    """次元ペア (j, j + d/2) を position * base^(-2j/d) だけ回転"""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] % 2 != 0:
        raise ConfigError("head_dim odd", f"head_dim={v.shape[-1]}")
    return rotate_batch(v[None, :], [position], cfg)[0]


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits)
    weights = np.exp(shifted)
    return weights / np.sum(weights)


def attend_frames(
    query_raw: np.ndarray,
    frames: Sequence[LatentFrame],
    positions: PositionAssignment,
    cfg: StreamConfig,
) -> AttentionResult:
    """与えられた位置割り当てでキーをその場で回転してアテンション"""
    if not frames:
        raise EmptyCacheError("no cached frames to attend over")

    keys = np.stack([f.key_raw for f in frames])
    values = np.stack([f.value for f in frames])
    key_positions = [positions.local(f.abs_index) for f in frames]

    rotated_keys = rotate_batch(keys, key_positions, cfg)
    rotated_query = rope_rotate(query_raw, positions.target_local, cfg)

    logits = rotated_keys @ rotated_query / math.sqrt(cfg.head_dim)
    scores = _softmax(logits)
    return AttentionResult(
        abs_indices=tuple(f.abs_index for f in frames),
        scores=scores,
        output=scores @ values,
        positions=positions,
    )


def attend_decoupled(query_raw: np.ndarray, p_abs_t: int, cache: KvCache) -> AttentionResult:
    """式(3): 現在のローカル位置でキーを回転する分離型アテンション"""
    if len(cache) == 0:
        raise EmptyCacheError("attend_decoupled called on an empty cache")
    positions = assign_positions(cache, p_abs_t)
    return attend_frames(query_raw, cache.frames(), positions, cache.cfg)


@dataclass
class PositionStats:
    """長時間ロールアウト中の位置・メモリ統計"""
    steps: int = 0
    max_frames_held: int = 0
    max_local: int = 0
    max_sink_distance: int = 0
    sink_always_zero: bool = True
    recent_gaps: set = field(default_factory=set)
    full_window_gaps_exact: bool = True

    def to_dict(self) -> Dict:
        return {
            "steps": self.steps,
            "max_frames_held": self.max_frames_held,
            "max_local": self.max_local,
            "max_sink_distance": self.max_sink_distance,
            "sink_always_zero": self.sink_always_zero,
            "min_recent_gap": min(self.recent_gaps) if self.recent_gaps else None,
            "max_recent_gap": max(self.recent_gaps) if self.recent_gaps else None,
            "full_window_gaps_exact": self.full_window_gaps_exact,
        }


def position_rollout(
    cfg: StreamConfig,
    steps: int,
    sliding: bool = True,
) -> Iterator[Tuple[int, PositionAssignment, KvCache]]:
    """ベクトル計算なしで挿入と位置割り当てだけを steps 回繰り返す"""
    cache = KvCache(cfg, sliding=sliding)
    # 位置の検証のみなのでベクトルは共有する
    zeros = np.zeros(cfg.head_dim)
    cache.insert(LatentFrame(abs_index=0, key_raw=zeros, value=zeros))
    for p_abs_t in range(1, steps + 1):
        yield p_abs_t, assign_positions(cache, p_abs_t), cache
        cache.insert(LatentFrame(abs_index=p_abs_t, key_raw=zeros, value=zeros))


def collect_position_stats(cfg: StreamConfig, steps: int, sliding: bool = True) -> PositionStats:
    """位置上限・シンク位置・窓内距離を集計"""
    stats = PositionStats()
    full_gaps = set(range(1, cfg.k_recent + 1))
    for p_abs_t, positions, cache in position_rollout(cfg, steps, sliding=sliding):
        stats.steps += 1
        stats.max_frames_held = max(stats.max_frames_held, len(cache))
        stats.max_local = max(stats.max_local, positions.max_local())

        sink = cache.sink
        if sink is not None:
            sink_local = positions.local_of[sink.abs_index]
            if sink_local != 0:
                stats.sink_always_zero = False
            stats.max_sink_distance = max(stats.max_sink_distance, positions.target_local - sink_local)

        gaps = {positions.target_local - positions.local_of[f.abs_index] for f in cache.recent}
        stats.recent_gaps |= gaps
        if len(cache.recent) == cfg.k_recent and gaps != full_gaps:
            stats.full_window_gaps_exact = False
    return stats


@dataclass(frozen=True)
class AblationCase:
    """アブレーション1行分の構成"""
    label: str
    cfg: StreamConfig
    sliding: bool = True


def default_ablation_cases(base: Optional[StreamConfig] = None) -> List[AblationCase]:
    """履歴保持なし / 上限なし / cap=16 / kv=4 の4構成"""
    base = base or StreamConfig()
    return [
        AblationCase("no sliding, no cap", base.model_copy(update={"position_mode": PositionMode.UNCAPPED}), sliding=False),
        AblationCase("kv=7, no cap", base.model_copy(update={"k_recent": 7, "position_mode": PositionMode.UNCAPPED})),
        AblationCase("kv=7, cap=16", base.model_copy(update={"k_recent": 7, "cap_c": 16})),
        AblationCase("kv=4, cap=16", base.model_copy(update={"k_recent": 4, "cap_c": 16})),
    ]


def ablation_report(cases: Sequence[AblationCase], steps: int) -> List[Dict]:
    """各構成の保持フレーム数と位置範囲を比較"""
    rows = []
    for case in cases:
        stats = collect_position_stats(case.cfg, steps, sliding=case.sliding)
        row = {
            "configuration": case.label,
            "k_recent": case.cfg.k_recent,
            "cap_c": case.cfg.cap_c if case.cfg.position_mode == PositionMode.BOUNDED else None,
            "sliding": case.sliding,
            **stats.to_dict(),
        }
        rows.append(row)
        logger.info(
            f"アブレーション {case.label}: 最大保持 {stats.max_frames_held}, "
            f"最大位置 {stats.max_local}, シンク距離 {stats.max_sink_distance}"
        )
    return rows
