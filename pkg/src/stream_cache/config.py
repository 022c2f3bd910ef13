"""
Configuration settings for the Stream Cache package
"""

import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union

import yaml
from pydantic import Field, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from src.stream_cache.errors import ConfigError
from src.stream_cache.models.pipeline import GridPoint, PipelineConfig, PipelineGrid
from src.stream_cache.models.stream import StreamConfig

logger = logging.getLogger(__name__)

# プロジェクトのルートディレクトリ
PROJECT_ROOT = Path(__file__).parent.parent.parent
DATA_DIR = PROJECT_ROOT / "data"
CONFIG_DIR = DATA_DIR / "config"
POLICY_DIR = DATA_DIR / "policy"
TRACE_DIR = DATA_DIR / "traces"
VOCABULARY_DIR = DATA_DIR / "vocabulary"


class Settings(BaseSettings):
    """Application settings"""
    model_config = SettingsConfigDict(
        env_prefix="STREAMCACHE_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # App settings
    app_name: str = "Stream Cache"
    app_version: str = "0.1.0"
    debug: bool = Field(default=False)

    # 実験設定
    seed: int = Field(default=0, description="--seed 未指定時のシード")
    default_format: str = Field(default="jsonl", description="レポート形式（csv|jsonl）")

    # ログ設定
    log_level: str = Field(default="INFO")
    log_format: str = Field(default="%(asctime)s - %(name)s - %(levelname)s - %(message)s")

    # データファイル
    data_dir: Path = Field(default=DATA_DIR)
    stream_config_path: Path = Field(default=CONFIG_DIR / "stream.yaml")
    pipeline_config_path: Path = Field(default=CONFIG_DIR / "pipeline_table.yaml")
    vocabulary_path: Path = Field(default=VOCABULARY_DIR / "actions.txt")
    policy_path: Path = Field(default=POLICY_DIR / "default_policy.yaml")

    # API settings
    api_host: str = Field(default="0.0.0.0")
    api_port: int = Field(default=8000)


# グローバル設定インスタンス
settings = Settings()


def configure_logging(level: Optional[str] = None) -> None:
    """エントリポイントで一度だけログを設定"""
    logging.basicConfig(
        level=getattr(logging, (level or settings.log_level).upper(), logging.INFO),
        format=settings.log_format,
    )


def validate_config(cfg: StreamConfig) -> StreamConfig:
    """StreamConfig の不変条件を検査し、最初の違反を名前付きで報告"""
    for name in ("k_sink", "k_recent", "k_noisy", "tokens_per_frame", "temporal_compression"):
        if getattr(cfg, name) <= 0:
            raise ConfigError(f"{name} <= 0", f"{name}={getattr(cfg, name)}")
    if cfg.head_dim <= 0:
        raise ConfigError("head_dim <= 0", f"head_dim={cfg.head_dim}")
    if cfg.head_dim % 2 != 0:
        raise ConfigError("head_dim odd", f"head_dim={cfg.head_dim}")
    if cfg.rope_base <= 0:
        raise ConfigError("rope_base <= 0", f"rope_base={cfg.rope_base}")
    if cfg.target_fps <= 0:
        raise ConfigError("target_fps <= 0", f"target_fps={cfg.target_fps}")
    if cfg.cap_c < cfg.k_recent:
        raise ConfigError("cap_c < k_recent", f"cap_c={cfg.cap_c}, k_recent={cfg.k_recent}")
    return cfg


def read_yaml(path: Union[str, Path]) -> Dict[str, Any]:
    """YAMLファイルを辞書として読み込む"""
    path = Path(path)
    if not path.exists():
        raise ConfigError("config file missing", str(path))
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        logger.error(f"YAMLの解析に失敗: {path}: {e}")
        raise ConfigError("config parse failure", str(e)) from e
    if not isinstance(data, dict):
        raise ConfigError("config parse failure", f"{path} is not a mapping")
    return data


def parse_stream_config(data: Dict[str, Any]) -> StreamConfig:
    """辞書から StreamConfig を構築して検証"""
    # stream: セクションがあればそれを使う
    section = data.get("stream", data)
    try:
        cfg = StreamConfig(**section)
    except ValidationError as e:
        raise ConfigError("config parse failure", str(e)) from e
    return validate_config(cfg)


def load_stream_config(path: Optional[Union[str, Path]] = None) -> StreamConfig:
    """StreamConfig をYAMLファイルから読み込む"""
    path = Path(path) if path else settings.stream_config_path
    cfg = parse_stream_config(read_yaml(path))
    logger.info(f"ストリーム設定を読み込み: {path} (k_recent={cfg.k_recent}, cap_c={cfg.cap_c})")
    return cfg


def parse_pipeline_grid(data: Dict[str, Any]) -> PipelineGrid:
    """パイプライン設定またはグリッド定義を PipelineGrid にまとめる"""
    try:
        if "grid" in data or "axes" in data or "base" in data:
            grid = PipelineGrid(**data)
        else:
            # 単一の設定ファイル: pipeline: セクションを1点のグリッドとして扱う
            section = data.get("pipeline", data)
            grid = PipelineGrid(base=PipelineConfig(**section), grid=[GridPoint()])
        # 上書きキーの綴り誤りや範囲外の値は読み込み時に検出する
        for point in grid.points():
            point.apply(grid.base)
    except ValidationError as e:
        raise ConfigError("config parse failure", str(e)) from e
    return grid


def load_pipeline_grid(path: Optional[Union[str, Path]] = None) -> PipelineGrid:
    """パイプラインのグリッド定義をYAMLファイルから読み込む"""
    path = Path(path) if path else settings.pipeline_config_path
    grid = parse_pipeline_grid(read_yaml(path))
    logger.info(f"パイプライン設定を読み込み: {path} ({len(grid.grid)} 点, モード {[m.value for m in grid.modes]})")
    return grid
