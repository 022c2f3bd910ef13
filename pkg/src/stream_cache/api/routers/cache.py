"""
Cache rollout API router
"""

import logging

from fastapi import APIRouter, HTTPException
from pydantic import BaseModel, Field, ValidationError

from src.stream_cache.config import validate_config
from src.stream_cache.errors import StreamCacheError
from src.stream_cache.models.rollout import AttentionVariant
from src.stream_cache.models.stream import StreamConfig
from src.stream_cache.services.attention_reference import run_rollout, staleness_onset, step_differences

logger = logging.getLogger(__name__)

router = APIRouter()

MAX_STEPS = 5000


class RolloutRequest(BaseModel):
    """ロールアウト要求"""
    steps: int = Field(default=200, ge=1, le=MAX_STEPS)
    seed: int = Field(default=0, ge=0)
    cap_c: int = Field(default=16)
    k_recent: int = Field(default=7)


@router.post("/rollout", response_model=dict)
def rollout(request: RolloutRequest):
    """3実装のロールアウトを比較して要約を返す"""
    try:
        cfg = validate_config(StreamConfig(cap_c=request.cap_c, k_recent=request.k_recent))
        decoupled = run_rollout(cfg, request.steps, request.seed, AttentionVariant.DECOUPLED)
        reference = run_rollout(cfg, request.steps, request.seed, AttentionVariant.REFERENCE)
        stale = run_rollout(cfg, request.steps, request.seed, AttentionVariant.STALE)
    except (StreamCacheError, ValidationError) as e:
        logger.error(f"ロールアウト要求エラー: {e}")
        raise HTTPException(status_code=400, detail=str(e))

    return {
        "steps": request.steps,
        "seed": request.seed,
        "cap_c": cfg.cap_c,
        "k_recent": cfg.k_recent,
        "max_local": max(max(r.positions.values()) for r in decoupled.records),
        "max_decoupled_vs_reference": max(step_differences(decoupled, reference)),
        "max_stale_vs_reference": max(step_differences(stale, reference)),
        "staleness_onset": staleness_onset(reference),
    }
