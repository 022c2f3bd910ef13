"""
Pipeline simulation API router
"""

import logging
from typing import Any, Dict, List

from fastapi import APIRouter, HTTPException
from pydantic import BaseModel, Field

from src.stream_cache.models.pipeline import GridPoint, PipelineConfig, ReportMode
from src.stream_cache.services.pipeline_simulator import derived_metrics, expand_grid, simulate, sweep

logger = logging.getLogger(__name__)

router = APIRouter()

MAX_CHUNKS = 5000


class SimulateRequest(BaseModel):
    """単一設定のシミュレーション要求"""
    config: PipelineConfig = Field(default_factory=PipelineConfig)
    n_chunks: int = Field(default=64, ge=2, le=MAX_CHUNKS)


class SweepRequest(BaseModel):
    """グリッドスイープ要求"""
    base: PipelineConfig = Field(default_factory=PipelineConfig)
    grid: List[GridPoint] = Field(default_factory=list)
    axes: Dict[str, List[Any]] = Field(default_factory=dict)
    modes: List[ReportMode] = Field(default_factory=lambda: [ReportMode.SEQUENTIAL, ReportMode.OVERLAPPED])
    n_chunks: int = Field(default=64, ge=2, le=MAX_CHUNKS)


@router.post("/simulate", response_model=dict)
def simulate_pipeline(request: SimulateRequest):
    """パイプラインをシミュレートし、導出指標を付けて返す"""
    result = simulate(request.config, request.n_chunks)
    try:
        eff_fps, rt_ratio = derived_metrics(result.throughput_ms_per_chunk, request.config)
    except ValueError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return {**result.summary(), "derived": {"eff_fps": eff_fps, "rt_ratio": rt_ratio}}


@router.post("/sweep", response_model=List[dict])
def sweep_pipeline(request: SweepRequest):
    """グリッドの各点についてレポート行を返す"""
    try:
        rows = sweep(request.base, expand_grid(request.grid, request.axes), request.modes, request.n_chunks)
    except ValueError as e:
        # 上書き値が PipelineConfig の制約を満たさない
        logger.error(f"スイープ要求エラー: {e}")
        raise HTTPException(status_code=400, detail=str(e))
    return [row.to_row() for row in rows]
