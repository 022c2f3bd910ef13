"""
Episode API router
"""

import logging
from typing import Optional

from fastapi import APIRouter, HTTPException
from pydantic import BaseModel, Field

from src.stream_cache.config import settings
from src.stream_cache.errors import StreamCacheError
from src.stream_cache.services.state_tracker import load_policy_table, observe_trace, run_episode

logger = logging.getLogger(__name__)

router = APIRouter()


class EpisodeRequest(BaseModel):
    """エピソード実行要求（トレースCSVとポリシーYAMLは本文で渡す）"""
    trace_csv: str = Field(description="window,entity,hit のCSV本文")
    policy_yaml: Optional[str] = Field(default=None, description="省略時は既定のポリシー")
    hp: Optional[int] = Field(default=None, ge=0)
    loop_enabled: bool = True


@router.post("/run", response_model=dict)
def run(request: EpisodeRequest):
    """Observer-Tracker-Policy ループを実行"""
    try:
        table = load_policy_table(request.policy_yaml if request.policy_yaml else settings.policy_path)
        events = observe_trace(request.trace_csv.splitlines())
        log = run_episode(events, table, initial_hp=request.hp, loop_enabled=request.loop_enabled)
    except StreamCacheError as e:
        logger.error(f"エピソード要求エラー: {e}")
        raise HTTPException(status_code=400, detail=str(e))

    return {
        "summary": log.summary(),
        "records": [record.to_report() for record in log.records],
    }
