"""
Self-attention and text cross-attention masks for the Sink + Recent + Noisy context

Token order is sink frames, recent frames, then noisy frames, each frame
expanded to tokens_per_frame consecutive tokens. True means "may attend".
"""

import math
from typing import List

import numpy as np

from src.stream_cache.errors import ConfigError
from src.stream_cache.models.stream import StreamConfig


def _check_geometry(cfg: StreamConfig) -> None:
    # マスクは k_recent=0 などの最小構成も受け付ける
    if cfg.k_sink < 0 or cfg.k_recent < 0:
        raise ConfigError("history counts negative", f"k_sink={cfg.k_sink}, k_recent={cfg.k_recent}")
    if cfg.k_noisy < 1:
        raise ConfigError("k_noisy <= 0", f"k_noisy={cfg.k_noisy}")
    if cfg.tokens_per_frame < 1:
        raise ConfigError("tokens_per_frame <= 0", f"tokens_per_frame={cfg.tokens_per_frame}")


def history_tokens(cfg: StreamConfig) -> int:
    return (cfg.k_sink + cfg.k_recent) * cfg.tokens_per_frame


def noisy_tokens(cfg: StreamConfig) -> int:
    return cfg.k_noisy * cfg.tokens_per_frame


def build_self_mask(cfg: StreamConfig, causal_history: bool = False) -> np.ndarray:
    """履歴内は双方向、履歴→ノイズは不可、ノイズ→全体は可"""
    _check_geometry(cfg)
    h = history_tokens(cfg)
    side = h + noisy_tokens(cfg)

    mask = np.zeros((side, side), dtype=bool)
    if causal_history:
        # アブレーション: 履歴もフレーム単位で因果的にする
        frame_of = np.arange(h) // cfg.tokens_per_frame
        mask[:h, :h] = frame_of[:, None] >= frame_of[None, :]
    else:
        mask[:h, :h] = True
    mask[h:, :] = True
    return mask


def build_cross_mask(cfg: StreamConfig, text_len: int, text_on_all_frames: bool = False) -> np.ndarray:
    """テキストはノイズフレームのトークンからのみ参照される"""
    _check_geometry(cfg)
    if text_len < 1:
        raise ConfigError("text_len <= 0", f"text_len={text_len}")
    h = history_tokens(cfg)
    mask = np.zeros((h + noisy_tokens(cfg), text_len), dtype=bool)
    if text_on_all_frames:
        mask[:, :] = True
    else:
        mask[h:, :] = True
    return mask


def expected_self_true_count(cfg: StreamConfig) -> int:
    """(H·tpf)² + (Kn·tpf)·((H+Kn)·tpf)"""
    h = history_tokens(cfg)
    n = noisy_tokens(cfg)
    return h * h + n * (h + n)


def expected_cross_true_count(cfg: StreamConfig, text_len: int) -> int:
    return noisy_tokens(cfg) * text_len


def context_attention(
    visual_q: np.ndarray,
    visual_k: np.ndarray,
    visual_v: np.ndarray,
    text_k: np.ndarray,
    text_v: np.ndarray,
    self_mask: np.ndarray,
    cross_mask: np.ndarray,
) -> np.ndarray:
    """視覚トークンの自己注意とテキスト交差注意を1つのsoftmaxで計算する参照実装"""
    n_visual, dim = visual_q.shape
    scale = 1.0 / math.sqrt(dim)
    outputs = np.zeros((n_visual, visual_v.shape[-1]))

    for row in range(n_visual):
        # 許可された列だけを取り出す（マスクされた列は計算に一切現れない）
        keys = np.concatenate([visual_k[self_mask[row]], text_k[cross_mask[row]]])
        values = np.concatenate([visual_v[self_mask[row]], text_v[cross_mask[row]]])
        logits = keys @ visual_q[row] * scale
        weights = np.exp(logits - logits.max())
        weights /= weights.sum()
        outputs[row] = weights @ values
    return outputs


def dump_mask(mask: np.ndarray) -> List[str]:
    """0/1 文字列の行として出力"""
    return ["".join("1" if cell else "0" for cell in row) for row in mask]
