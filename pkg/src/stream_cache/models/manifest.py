"""
Run manifest recorded for every CLI subcommand
"""

from datetime import datetime
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field


class RunManifest(BaseModel):
    """サブコマンド1回分の実行条件"""
    model_config = ConfigDict(frozen=True)

    subcommand: str
    config_path: Optional[Path] = None
    seed: Optional[int] = None
    out: Optional[Path] = Field(default=None, description="出力先（None は標準出力）")
    format: Literal["csv", "jsonl"] = "jsonl"
    started_at: datetime = Field(default_factory=datetime.now)

    def describe(self) -> str:
        target = str(self.out) if self.out else "stdout"
        config = str(self.config_path) if self.config_path else "default"
        return f"{self.subcommand} config={config} seed={self.seed} -> {target} ({self.format})"
