"""
Stream Cache の通し動作テスト用スクリプト

pytest からも `python test_system.py` からも実行できる。
"""

import logging
import sys
from pathlib import Path

# プロジェクトのルートディレクトリをPythonパスに追加
sys.path.append(str(Path(__file__).parent))

from src.stream_cache.config import CONFIG_DIR, POLICY_DIR, TRACE_DIR, load_pipeline_grid, load_stream_config
from src.stream_cache.models.pipeline import ReportMode
from src.stream_cache.models.rollout import AttentionVariant
from src.stream_cache.services.attention_mask import build_cross_mask, build_self_mask
from src.stream_cache.services.attention_reference import run_rollout, staleness_onset, step_differences
from src.stream_cache.services.invariant_checks import CheckOptions, run_all
from src.stream_cache.services.pipeline_simulator import expand_grid, sweep
from src.stream_cache.services.state_tracker import load_policy_table, observe_trace, run_episode

# ログ設定
logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)


def test_cache_rollout():
    """分離型キャッシュと参照実装の一致"""
    logger.info("=== キャッシュロールアウトのテスト開始 ===")
    cfg = load_stream_config(CONFIG_DIR / "stream.yaml")

    decoupled = run_rollout(cfg, 100, 0, AttentionVariant.DECOUPLED)
    reference = run_rollout(cfg, 100, 0, AttentionVariant.REFERENCE)
    stale = run_rollout(cfg, 100, 0, AttentionVariant.STALE)

    oracle_diff = max(step_differences(decoupled, reference))
    stale_diff = max(step_differences(stale, reference))
    logger.info(f"参照実装との最大差: {oracle_diff:.3e}")
    logger.info(f"古い回転との最大差: {stale_diff:.3e}")
    logger.info(f"ずれ始めるステップ: {staleness_onset(reference)}")

    assert oracle_diff <= 1e-6
    assert stale_diff > 1e-3
    assert max(max(r.positions.values()) for r in decoupled.records) <= cfg.cap_c


def test_masks():
    """既定構成のマスク形状"""
    logger.info("=== マスクのテスト開始 ===")
    cfg = load_stream_config(CONFIG_DIR / "stream.yaml")
    self_mask = build_self_mask(cfg)
    cross_mask = build_cross_mask(cfg, 4)
    logger.info(f"自己注意マスク: {self_mask.shape}, 真 {int(self_mask.sum())}")
    logger.info(f"交差注意マスク: {cross_mask.shape}, 真 {int(cross_mask.sum())}")
    assert int(self_mask.sum()) == 73
    assert int(cross_mask.sum()) == 4


def test_pipeline_table():
    """計測表の各点を逐次・理想・実測で比較"""
    logger.info("=== パイプライン表のテスト開始 ===")
    grid = load_pipeline_grid(CONFIG_DIR / "pipeline_table.yaml")
    rows = sweep(grid.base, expand_grid(grid.grid, grid.axes), grid.modes, n_chunks=32)

    for row in rows:
        logger.info(
            f"{row.backend} L={row.L} {row.mode.value:10} {row.throughput_ms:7.1f} ms "
            f"{row.eff_fps:5.2f} fps RT={row.rt_ratio:.2f}"
        )
    by_key = {(row.backend, row.L, row.mode): row for row in rows}
    ideal = by_key[("wan", 3, ReportMode.IDEAL)].throughput_ms
    sequential = by_key[("wan", 3, ReportMode.SEQUENTIAL)].throughput_ms
    measured = by_key[("wan", 3, ReportMode.MEASURED)].throughput_ms
    assert ideal <= measured <= sequential


def test_episode():
    """10回被弾でTerminalに到達する"""
    logger.info("=== エピソードのテスト開始 ===")
    table = load_policy_table(POLICY_DIR / "default_policy.yaml")
    events = observe_trace(TRACE_DIR / "ten_hits.csv")
    log = run_episode(events, table, initial_hp=10)

    for record in log.records:
        for prompt in record.injected_prompts:
            logger.info(f"窓 {record.window_index}: {prompt}")
    logger.info(f"要約: {log.summary()}")
    assert log.terminal_triggered
    assert log.terminal_window == 30


def test_check_suites():
    """性質スイート（重いものを除く）"""
    logger.info("=== 性質スイートのテスト開始 ===")
    options = CheckOptions(stream=load_stream_config(CONFIG_DIR / "stream.yaml"), steps=40, seeds=range(2))
    results = run_all(options, ["config", "prompt", "rope_positions", "masks", "oracle"])
    for result in results:
        logger.info(f"{result.name}: {'合格' if result.passed else '不合格'} ({result.checks} 件)")
        for failure in result.failures:
            logger.warning(f"  {failure}")
    assert all(result.passed for result in results)


def main():
    """メインテスト関数"""
    logger.info("Stream Cache 統合テストを開始します")
    test_cache_rollout()
    test_masks()
    test_pipeline_table()
    test_episode()
    test_check_suites()
    logger.info("統合テスト完了")


if __name__ == "__main__":
    main()
