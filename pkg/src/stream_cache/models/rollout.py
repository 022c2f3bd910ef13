"""
Rollout trace models for the attention oracle
"""

from enum import Enum
from typing import Dict, List

from pydantic import BaseModel, Field


class AttentionVariant(str, Enum):
    """アテンションの実装バリエーション"""
    DECOUPLED = "decoupled"
    REFERENCE = "reference"
    STALE = "stale"


class RolloutStep(BaseModel):
    """ロールアウト1ステップの記録"""
    step: int = Field(description="ステップ番号（1始まり）")
    p_abs_t: int = Field(description="ターゲットの絶対フレームインデックス")
    delta: int = Field(description="位置シフト δ")
    positions: Dict[int, int] = Field(description="絶対インデックス → ローカル位置")
    target_local: int = Field(description="ターゲットのローカル位置")
    scores: List[float] = Field(description="softmaxスコア")
    output: List[float] = Field(description="値の重み付き和")

    def to_report(self) -> dict:
        """JSON lines 出力用の要約"""
        return {
            "step": self.step,
            "p_abs_t": self.p_abs_t,
            "delta": self.delta,
            "positions": sorted(self.positions.values()),
            "target_local": self.target_local,
            "max_score": max(self.scores),
        }


class RolloutTrace(BaseModel):
    """シード付きロールアウトのトレース"""
    seed: int = Field(description="乱数シード")
    variant: AttentionVariant = Field(description="アテンション実装")
    steps: int = Field(description="要求ステップ数")
    records: List[RolloutStep] = Field(default_factory=list)
