"""
Shared fixtures
"""

import pytest

from src.stream_cache.config import CONFIG_DIR, POLICY_DIR, TRACE_DIR
from src.stream_cache.models.stream import StreamConfig
from src.stream_cache.services.state_tracker import load_policy_table


@pytest.fixture
def stream_cfg() -> StreamConfig:
    return StreamConfig()


@pytest.fixture
def policy_table():
    return load_policy_table(POLICY_DIR / "default_policy.yaml")


@pytest.fixture
def ten_hits_path():
    return TRACE_DIR / "ten_hits.csv"


@pytest.fixture
def pipeline_table_path():
    return CONFIG_DIR / "pipeline_table.yaml"
