"""
Reference oracle for RoPE-decoupled attention and the stale-rotation control

The oracle shares no rotation or softmax code with rope_cache: rotation is done
with complex multiplication and normalization with a log-sum-exp. The stale
cache rotates each key once at insertion and never again, which is the failure
mode decoupling fixes.
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Optional, Sequence

import numpy as np

from src.stream_cache.errors import EmptyCacheError, PositionError, TraceLengthError
from src.stream_cache.models.rollout import AttentionVariant, RolloutStep, RolloutTrace
from src.stream_cache.models.stream import LatentFrame, PositionMode, StreamConfig
from src.stream_cache.services.frame_source import synth_frame, synth_query
from src.stream_cache.services.rope_cache import (
    KvCache,
    PositionAssignment,
    assign_positions,
    attend_decoupled,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OracleOutput:
    """参照実装の出力"""
    scores: np.ndarray
    output: np.ndarray


_PHASOR_TABLE_SIZE = 256


def _theta(head_dim: int, rope_base: float) -> np.ndarray:
    exponents = -2.0 * np.arange(head_dim // 2) / head_dim
    return np.exp(exponents * math.log(rope_base))


@lru_cache(maxsize=64)
def _phasor_table(head_dim: int, rope_base: float) -> np.ndarray:
    """小さな位置に対する単位複素数 exp(i·p·θ) の表"""
    table = np.exp(1j * np.arange(_PHASOR_TABLE_SIZE)[:, None] * _theta(head_dim, rope_base)[None, :])
    table.setflags(write=False)
    return table


def _phasors(positions: Sequence[int], head_dim: int, cfg: StreamConfig) -> np.ndarray:
    index = np.asarray(positions)
    if index.size and index.dtype.kind in "iu" and 0 <= index.min() and index.max() < _PHASOR_TABLE_SIZE:
        return _phasor_table(head_dim, float(cfg.rope_base))[index]
    return np.exp(1j * index.astype(np.float64)[:, None] * _theta(head_dim, cfg.rope_base)[None, :])


def _to_complex(v: np.ndarray) -> np.ndarray:
    half = v.shape[-1] // 2
    return v[..., :half] + 1j * v[..., half:]


def _from_complex(z: np.ndarray) -> np.ndarray:
    return np.concatenate([z.real, z.imag], axis=-1)


def _complex_rotate(v: np.ndarray, position: int, cfg: StreamConfig) -> np.ndarray:
    return _from_complex(_to_complex(v) * _phasors([position], v.shape[-1], cfg)[0])


def _normalized(logits: np.ndarray) -> np.ndarray:
    return np.exp(logits - np.logaddexp.reduce(logits))


def attend_reference(
    frames: Sequence[LatentFrame],
    positions: PositionAssignment,
    query_raw: np.ndarray,
    cfg: StreamConfig,
) -> OracleOutput:
    """全キーを現在位置で改めて回転する正解値の計算"""
    if not frames:
        raise EmptyCacheError("reference attention needs at least one frame")

    missing = [f.abs_index for f in frames if f.abs_index not in positions.local_of]
    if missing:
        raise PositionError(f"no position assigned for frame {missing[0]}")

    q = _complex_rotate(np.asarray(query_raw, dtype=np.float64), positions.target_local, cfg)
    keys = np.stack([f.key_raw for f in frames])
    local = [positions.local_of[f.abs_index] for f in frames]
    rotated = _from_complex(_to_complex(keys) * _phasors(local, keys.shape[-1], cfg))
    logits = rotated @ q / math.sqrt(cfg.head_dim)

    scores = _normalized(logits)
    output = np.einsum("i,id->d", scores, np.stack([f.value for f in frames]))
    return OracleOutput(scores=scores, output=output)


def insertion_position(abs_index: int, cfg: StreamConfig) -> int:
    """生成時（ターゲットだった時点）のローカル位置"""
    if cfg.position_mode == PositionMode.UNCAPPED:
        return abs_index
    return min(abs_index, cfg.cap_c)


class StaleKvCache:
    """挿入時の位置で回転済みのキーを保持するキャッシュ（比較対照用）"""

    def __init__(self, cfg: StreamConfig):
        self.cfg = cfg
        self._order = KvCache(cfg)
        self._rotated: Dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._order)

    def frames(self) -> List[LatentFrame]:
        return self._order.frames()

    def rotated_key(self, abs_index: int) -> np.ndarray:
        return self._rotated[abs_index]

    def insert(self, frame: LatentFrame) -> Optional[LatentFrame]:
        evicted = self._order.insert(frame)
        self._rotated[frame.abs_index] = _complex_rotate(
            frame.key_raw, insertion_position(frame.abs_index, self.cfg), self.cfg
        )
        if evicted is not None:
            del self._rotated[evicted.abs_index]
        return evicted


def attend_stale(cache: StaleKvCache, query_raw: np.ndarray, p_abs_t: int) -> OracleOutput:
    """キーを再回転しないアテンション（δ が増えると位置が古くなる）"""
    frames = cache.frames()
    if not frames:
        raise EmptyCacheError("attend_stale called on an empty cache")

    cfg = cache.cfg
    q = _complex_rotate(np.asarray(query_raw, dtype=np.float64), insertion_position(p_abs_t, cfg), cfg)
    logits = np.array([np.dot(q, cache.rotated_key(f.abs_index)) for f in frames]) / math.sqrt(cfg.head_dim)
    scores = _normalized(logits)
    output = np.einsum("i,id->d", scores, np.stack([f.value for f in frames]))
    return OracleOutput(scores=scores, output=output)


def run_rollout(
    cfg: StreamConfig,
    steps: int,
    seed: int,
    variant: AttentionVariant = AttentionVariant.DECOUPLED,
) -> RolloutTrace:
    """シード付きの合成フレームで steps 回のアテンションを実行"""
    if steps < 1:
        raise ValueError("steps must be ≥ 1")

    cache = KvCache(cfg)
    stale = StaleKvCache(cfg) if variant == AttentionVariant.STALE else None
    trace = RolloutTrace(seed=seed, variant=variant, steps=steps)

    def insert(frame: LatentFrame) -> None:
        cache.insert(frame)
        if stale is not None:
            stale.insert(frame)

    insert(synth_frame(seed, 0, cfg))
    for step in range(1, steps + 1):
        p_abs_t = step
        query = synth_query(seed, p_abs_t, cfg)
        positions = assign_positions(cache, p_abs_t)

        if variant == AttentionVariant.DECOUPLED:
            result = attend_decoupled(query, p_abs_t, cache)
            scores, output = result.scores, result.output
        elif variant == AttentionVariant.REFERENCE:
            oracle = attend_reference(cache.frames(), positions, query, cfg)
            scores, output = oracle.scores, oracle.output
        else:
            oracle = attend_stale(stale, query, p_abs_t)
            scores, output = oracle.scores, oracle.output

        # 各フィールドは既に正しい型（検証なしで構築）
        trace.records.append(
            RolloutStep.model_construct(
                step=step,
                p_abs_t=p_abs_t,
                delta=positions.delta,
                positions=dict(positions.local_of),
                target_local=positions.target_local,
                scores=scores.tolist(),
                output=output.tolist(),
            )
        )
        insert(synth_frame(seed, p_abs_t, cfg))

    logger.debug(f"ロールアウト完了: variant={variant.value}, seed={seed}, steps={steps}")
    return trace


def step_differences(a: RolloutTrace, b: RolloutTrace) -> List[float]:
    """ステップごとの出力の最大絶対差"""
    if len(a.records) != len(b.records):
        raise TraceLengthError(f"trace lengths differ: {len(a.records)} vs {len(b.records)}")
    return [
        float(np.max(np.abs(np.asarray(x.output) - np.asarray(y.output))))
        for x, y in zip(a.records, b.records)
    ]


def compare_traces(a: RolloutTrace, b: RolloutTrace) -> float:
    """全ステップにわたる出力の最大絶対差"""
    differences = step_differences(a, b)
    return max(differences) if differences else 0.0


def staleness_onset(trace: RolloutTrace) -> Optional[int]:
    """δ が初めて正になったステップ"""
    for record in trace.records:
        if record.delta > 0:
            return record.step
    return None
