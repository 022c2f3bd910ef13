"""
Domain models for the Stream Cache package
"""

from .stream import ActionPrompt, LatentFrame, PositionMode, PromptSlot, StreamConfig
from .rollout import AttentionVariant, RolloutStep, RolloutTrace
from .pipeline import (
    ChunkJob,
    GridPoint,
    PipelineConfig,
    PipelineGrid,
    ReportMode,
    Schedule,
    SimResult,
    StartupCosts,
    SweepRow,
)
from .manifest import RunManifest
from .episode import (
    DamageEvent,
    EntityPolicy,
    EpisodeLog,
    EpisodeRecord,
    Phase,
    PolicyRow,
    PolicyTable,
    TrackerState,
)

__all__ = [
    "ActionPrompt",
    "LatentFrame",
    "PositionMode",
    "PromptSlot",
    "StreamConfig",
    "AttentionVariant",
    "RolloutStep",
    "RolloutTrace",
    "ChunkJob",
    "GridPoint",
    "PipelineConfig",
    "PipelineGrid",
    "ReportMode",
    "Schedule",
    "SimResult",
    "StartupCosts",
    "SweepRow",
    "DamageEvent",
    "EntityPolicy",
    "EpisodeLog",
    "EpisodeRecord",
    "Phase",
    "PolicyRow",
    "PolicyTable",
    "TrackerState",
    "RunManifest",
]
