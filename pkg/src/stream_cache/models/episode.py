"""
Entity state models for the Observer-Tracker-Policy loop
"""

from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field


class Phase(str, Enum):
    """エピソードの進行フェーズ（定義順が進行順）"""
    NORMAL_COMBAT = "NormalCombat"
    STAGGER = "Stagger"
    EXECUTION = "Execution"
    TERMINAL = "Terminal"

    @property
    def rank(self) -> int:
        return list(Phase).index(self)


class DamageEvent(BaseModel):
    """0.25秒窓ごとのエンティティ被弾イベント"""
    model_config = ConfigDict(frozen=True)

    window_index: int = Field(ge=0, description="0.25秒窓のインデックス")
    entity: str = Field(description="エンティティID")
    hit: bool = Field(description="被弾したか")


class TrackerState(BaseModel):
    """エンティティごとの整数HPと被弾数"""
    model_config = ConfigDict(frozen=True)

    hp: Dict[str, int] = Field(default_factory=dict)
    hits_taken: Dict[str, int] = Field(default_factory=dict)

    @classmethod
    def initial(cls, hp: Dict[str, int]) -> "TrackerState":
        return cls(hp=dict(hp), hits_taken={entity: 0 for entity in hp})


class PolicyRow(BaseModel):
    """HP が hp_threshold 以下になったときのフェーズとアクション"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    hp_threshold: int = Field(description="このフェーズが有効になるHPの上限")
    phase: Phase
    prompt_template: str = Field(description="注入するアクション記述")


class EntityPolicy(BaseModel):
    """エンティティ1体分の閾値表"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    initial_hp: int = Field(default=20, ge=0)
    idle_action: str = Field(default="Standing", description="遷移前の現在アクション")
    rows: List[PolicyRow]


class PolicyTable(BaseModel):
    """エンティティ名 → 閾値表"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    entities: Dict[str, EntityPolicy]


class EpisodeRecord(BaseModel):
    """1窓分のエピソード記録"""
    window_index: int
    hp: Dict[str, int]
    hits_taken: Dict[str, int]
    phases: Dict[str, Phase]
    injected_prompts: List[str] = Field(default_factory=list, description="遷移ごとに1つ注入されたプロンプト")
    transitions: List[str] = Field(default_factory=list, description="遷移したエンティティ")

    @property
    def injected_prompt(self) -> Optional[str]:
        return self.injected_prompts[-1] if self.injected_prompts else None

    def to_report(self) -> dict:
        row = self.model_dump()
        row["phases"] = {entity: phase.value for entity, phase in self.phases.items()}
        return row


class EpisodeLog(BaseModel):
    """エピソード全体のログ"""
    loop_enabled: bool = True
    records: List[EpisodeRecord] = Field(default_factory=list)
    terminal_triggered: bool = False
    terminal_window: Optional[int] = None
    terminal_entity: Optional[str] = None
    final_hp: Dict[str, int] = Field(default_factory=dict)

    def injected_prompts(self) -> List[str]:
        return [prompt for r in self.records for prompt in r.injected_prompts]

    def summary(self) -> dict:
        return {
            "loop_enabled": self.loop_enabled,
            "windows": len(self.records),
            "terminal_triggered": self.terminal_triggered,
            "terminal_window": self.terminal_window,
            "terminal_entity": self.terminal_entity,
            "final_hp": self.final_hp,
            "injections": len(self.injected_prompts()),
        }
