import pytest

from src.stream_cache.config import (
    CONFIG_DIR,
    Settings,
    load_pipeline_grid,
    load_stream_config,
    parse_pipeline_grid,
    validate_config,
)
from src.stream_cache.errors import ConfigError
from src.stream_cache.models.pipeline import ReportMode
from src.stream_cache.models.stream import PositionMode, StreamConfig


@pytest.mark.parametrize("k_recent, cap_c", [(7, 16), (7, 7), (4, 16), (7, 12)])
def test_validate_config_accepts_cap_at_or_above_window(k_recent, cap_c):
    cfg = StreamConfig(k_recent=k_recent, cap_c=cap_c)
    assert validate_config(cfg) is cfg


def test_validate_config_names_cap_violation():
    with pytest.raises(ConfigError) as exc:
        validate_config(StreamConfig(k_recent=7, cap_c=6))
    assert exc.value.invariant == "cap_c < k_recent"
    assert str(exc.value).startswith("cap_c < k_recent")


@pytest.mark.parametrize(
    "overrides, invariant",
    [
        ({"head_dim": 15}, "head_dim odd"),
        ({"head_dim": 0}, "head_dim <= 0"),
        ({"k_sink": 0}, "k_sink <= 0"),
        ({"k_noisy": 0}, "k_noisy <= 0"),
        ({"tokens_per_frame": 0}, "tokens_per_frame <= 0"),
        ({"rope_base": 0.0}, "rope_base <= 0"),
    ],
)
def test_validate_config_reports_first_violation(overrides, invariant):
    with pytest.raises(ConfigError) as exc:
        validate_config(StreamConfig(**overrides))
    assert exc.value.invariant == invariant


def test_load_shipped_stream_config():
    cfg = load_stream_config(CONFIG_DIR / "stream.yaml")
    assert cfg == StreamConfig()
    assert cfg.position_mode == PositionMode.BOUNDED


def test_load_cap12_config_keeps_other_defaults():
    cfg = load_stream_config(CONFIG_DIR / "stream_cap12.yaml")
    assert (cfg.cap_c, cfg.k_recent, cfg.head_dim) == (12, 7, 16)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError) as exc:
        load_stream_config(tmp_path / "absent.yaml")
    assert exc.value.invariant == "config file missing"


@pytest.mark.parametrize(
    "text, invariant",
    [
        ("stream: {k_recnt: 7}\n", "config parse failure"),
        ("- 1\n- 2\n", "config parse failure"),
        ("stream: {k_recent: [1\n", "config parse failure"),
        ("stream: {k_recent: 7, cap_c: 6}\n", "cap_c < k_recent"),
    ],
)
def test_bad_config_files(tmp_path, text, invariant):
    path = tmp_path / "stream.yaml"
    path.write_text(text, encoding="utf-8")
    with pytest.raises(ConfigError) as exc:
        load_stream_config(path)
    assert exc.value.invariant == invariant


def test_seed_falls_back_to_environment(monkeypatch):
    monkeypatch.setenv("STREAMCACHE_SEED", "7")
    assert Settings().seed == 7


def test_load_timing_table(pipeline_table_path):
    grid = load_pipeline_grid(pipeline_table_path)
    assert grid.modes == [ReportMode.MEASURED, ReportMode.SEQUENTIAL, ReportMode.IDEAL]
    assert grid.base.write_latency_ms == 37
    assert [p.measured_throughput_ms for p in grid.grid] == [789, 596, 409, 406]
    assert grid.grid[0].overrides() == {"overlap_frames": 3, "dit_latency_ms": 501, "vae_latency_ms": 432}
    assert grid.startup.model_loading_s == [68.0, 70.0]


def test_single_pipeline_config_becomes_one_point():
    grid = parse_pipeline_grid({"pipeline": {"dit_latency_ms": 10, "queue_depth": 1}})
    assert len(grid.grid) == 1
    assert grid.base.dit_latency_ms == 10
    assert grid.base.queue_depth == 1


def test_pipeline_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        parse_pipeline_grid({"pipeline": {"dit_ms": 10}})


def test_grid_override_typo_is_a_parse_error():
    data = {"base": {"overlap_frames": 3}, "grid": [{"backend": "wan", "dit_latency": 501}]}
    with pytest.raises(ConfigError, match="config parse failure"):
        parse_pipeline_grid(data)


def test_axis_values_are_checked_at_load_time():
    with pytest.raises(ConfigError, match="config parse failure"):
        parse_pipeline_grid({"grid": [{"backend": "taehv"}], "axes": {"queue_depth": [1, 0]}})
    grid = parse_pipeline_grid({"grid": [{"backend": "taehv"}], "axes": {"queue_depth": [1, 2, 4]}})
    assert [p.apply(grid.base).queue_depth for p in grid.points()] == [1, 2, 4]
