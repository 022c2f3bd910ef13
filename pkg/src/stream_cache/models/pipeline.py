"""
Pipeline configuration and simulation result models
"""

import itertools
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence

from pydantic import BaseModel, ConfigDict, Field


class Schedule(str, Enum):
    """デコードパイプラインのスケジュール"""
    SEQUENTIAL = "sequential"
    OVERLAPPED = "overlapped"


class ReportMode(str, Enum):
    """レポート行のモード"""
    SEQUENTIAL = "sequential"
    OVERLAPPED = "overlapped"
    IDEAL = "ideal"        # overlapped, contention_factor=1
    MEASURED = "measured"  # 実測スループットからの導出値のみ


class PipelineConfig(BaseModel):
    """チャンク単位の生産者・消費者パイプライン設定"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    chunk_latent_frames: int = Field(default=2, ge=1, description="チャンクあたりの新規潜在フレーム数 C")
    overlap_frames: int = Field(default=1, ge=0, description="VAE入力に前置する潜在フレーム数 L")
    queue_depth: int = Field(default=2, ge=1, description="処理中チャンク数の上限 Q")
    dit_latency_ms: float = Field(default=361.0, ge=0, description="チャンクあたりのDiT時間")
    vae_latency_ms: float = Field(default=9.0, ge=0, description="チャンクあたりのVAE時間")
    write_latency_ms: float = Field(default=37.0, ge=0, description="チャンクあたりの書き出し時間")
    schedule: Schedule = Field(default=Schedule.OVERLAPPED)
    contention_factor: float = Field(default=1.0, ge=1.0, description="同時実行時の減速率")
    temporal_compression: int = Field(default=4, ge=1)
    target_fps: float = Field(default=16.0, gt=0)
    vae_jitter_ms: float = Field(default=0.0, ge=0, description="VAE時間の一様ジッター幅")
    jitter_seed: int = Field(default=0)

    @property
    def vae_input_frames(self) -> int:
        return self.overlap_frames + self.chunk_latent_frames

    @property
    def retained_pixel_frames(self) -> int:
        return self.chunk_latent_frames * self.temporal_compression


class ChunkJob(BaseModel):
    """1チャンク分の処理記録"""
    index: int
    produce_done_ms: float
    submit_ms: float = Field(description="キューへの投入時刻")
    decode_start_ms: Optional[float] = None
    decode_done_ms: Optional[float] = None
    write_done_ms: Optional[float] = None
    snapshot_taken: bool = False
    snapshot_version: Optional[int] = None
    snapshot_stable: bool = False
    occupancy_before_submit: int = 0
    stalled: bool = False


class SimResult(BaseModel):
    """シミュレーション結果"""
    schedule: Schedule
    n_chunks: int
    throughput_ms_per_chunk: float = Field(description="定常状態の書き出し間隔")
    eff_fps: float
    rt_ratio: float
    max_queue_occupancy: int
    producer_stalls: int = 0
    emission_indices: List[int] = Field(default_factory=list)
    vae_input_frames: int
    retained_pixel_frames: int
    peak_snapshot_frames: int = 0
    jobs: List[ChunkJob] = Field(default_factory=list)

    def summary(self) -> Dict[str, Any]:
        return self.model_dump(exclude={"jobs", "emission_indices"})


class GridPoint(BaseModel):
    """スイープ1点分の上書き値"""
    model_config = ConfigDict(extra="allow")

    backend: str = Field(default="custom")
    measured_throughput_ms: Optional[float] = None

    def overrides(self) -> Dict[str, Any]:
        return {k: v for k, v in (self.model_extra or {}).items()}

    def apply(self, base: PipelineConfig) -> PipelineConfig:
        """base に上書き値を適用して検証済みの設定を作る"""
        # model_copy は検証しないので作り直す
        return PipelineConfig(**{**base.model_dump(), **self.overrides()})


def expand_points(points: Sequence[GridPoint], axes: Dict[str, List[Any]]) -> List[GridPoint]:
    """グリッド点と軸の直積を展開"""
    if not axes:
        return list(points)
    base_points = list(points) or [GridPoint()]
    names = list(axes)
    expanded = []
    for point in base_points:
        for combo in itertools.product(*(axes[name] for name in names)):
            expanded.append(GridPoint(**{**point.model_dump(), **point.overrides(), **dict(zip(names, combo))}))
    return expanded


class StartupCosts(BaseModel):
    """チャンクごとに再発しない起動時コスト（報告のみ）"""
    model_loading_s: List[float] = Field(default_factory=lambda: [68.0, 70.0])
    first_frame_encode_s: List[float] = Field(default_factory=lambda: [0.3, 1.6])


class PipelineGrid(BaseModel):
    """パイプラインのスイープ定義"""
    model_config = ConfigDict(extra="forbid")

    base: PipelineConfig = Field(default_factory=PipelineConfig)
    n_chunks: int = Field(default=64, ge=2)
    modes: List[ReportMode] = Field(default_factory=lambda: [ReportMode.SEQUENTIAL, ReportMode.OVERLAPPED])
    grid: List[GridPoint] = Field(default_factory=list)
    axes: Dict[str, List[Any]] = Field(default_factory=dict)
    startup: StartupCosts = Field(default_factory=StartupCosts)

    def points(self) -> List[GridPoint]:
        return expand_points(self.grid, self.axes)


class SweepRow(BaseModel):
    """レポート表の1行"""
    backend: str
    L: int
    Q: int
    mode: ReportMode
    throughput_ms: float
    eff_fps: float
    rt_ratio: float
    max_queue: Optional[int] = None

    def to_row(self) -> Dict[str, Any]:
        row = self.model_dump()
        row["mode"] = self.mode.value
        return row
