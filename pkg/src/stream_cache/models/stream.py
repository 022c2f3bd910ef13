"""
Stream configuration and per-frame domain types
"""

from dataclasses import dataclass
from enum import Enum
from typing import List

import numpy as np
from pydantic import BaseModel, ConfigDict, Field


class PositionMode(str, Enum):
    """ローカル位置の割り当て方式"""
    BOUNDED = "bounded"    # clamp(abs - δ, 0, C)
    UNCAPPED = "uncapped"  # abs - δ（上限なし、アブレーション用）


class StreamConfig(BaseModel):
    """ストリーミング推論の構造定数"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    k_sink: int = Field(default=1, description="シンクフレーム数")
    k_recent: int = Field(default=7, description="直近フレーム数（スライディング窓）")
    k_noisy: int = Field(default=1, description="ノイズ付きターゲットフレーム数")
    cap_c: int = Field(default=16, description="ローカルRoPE位置の上限 C")
    tokens_per_frame: int = Field(default=1, description="フレームあたりのトークン数")
    head_dim: int = Field(default=16, description="ヘッド次元（偶数）")
    rope_base: float = Field(default=10000.0, description="回転位置埋め込みの基数")
    temporal_compression: int = Field(default=4, description="潜在フレームあたりの画素フレーム数")
    target_fps: float = Field(default=16.0, description="目標再生FPS")
    position_mode: PositionMode = Field(default=PositionMode.BOUNDED, description="位置割り当て方式")

    @property
    def history_frames(self) -> int:
        return self.k_sink + self.k_recent

    @property
    def context_frames(self) -> int:
        return self.k_sink + self.k_recent + self.k_noisy

    @property
    def max_cached_frames(self) -> int:
        return self.k_sink + self.k_recent


@dataclass(frozen=True)
class LatentFrame:
    """潜在フレーム（回転前のキーと値を保持）"""
    abs_index: int
    key_raw: np.ndarray
    value: np.ndarray

    def __post_init__(self):
        # 保存後の書き換えを防ぐ
        self.key_raw.setflags(write=False)
        self.value.setflags(write=False)


class PromptSlot(BaseModel):
    """エンティティ1体分のアクションスロット"""
    model_config = ConfigDict(frozen=True)

    entity_name: str = Field(description="エンティティ名")
    action_text: str = Field(description="アクション記述")


class ActionPrompt(BaseModel):
    """0.25秒窓ごとのマルチエンティティプロンプト"""
    model_config = ConfigDict(frozen=True)

    slots: List[PromptSlot] = Field(description="スロット（順序を保持）")
    window_index: int = Field(default=0, description="0.25秒窓のインデックス")

    @classmethod
    def from_pairs(cls, pairs, window_index: int = 0) -> "ActionPrompt":
        return cls(
            slots=[PromptSlot(entity_name=name, action_text=text) for name, text in pairs],
            window_index=window_index,
        )
