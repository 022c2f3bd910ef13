"""
Property suites run by the `check` command

Every suite runs with fixed seeds and collects failures instead of stopping at
the first one, so a single run reports everything that is broken.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from src.stream_cache.config import validate_config
from src.stream_cache.errors import ConfigError, PromptError, StreamCacheError
from src.stream_cache.models.episode import DamageEvent, EntityPolicy, Phase, PolicyRow, PolicyTable
from src.stream_cache.models.pipeline import GridPoint, PipelineConfig, PipelineGrid, Schedule
from src.stream_cache.models.rollout import AttentionVariant
from src.stream_cache.models.stream import ActionPrompt, StreamConfig
from src.stream_cache.services.attention_mask import (
    build_cross_mask,
    build_self_mask,
    context_attention,
    expected_cross_true_count,
    expected_self_true_count,
)
from src.stream_cache.services.attention_reference import run_rollout, staleness_onset, step_differences
from src.stream_cache.services.pipeline_simulator import bracket, derived_metrics, simulate
from src.stream_cache.services.prompt_formatter import format_prompt
from src.stream_cache.services.rope_cache import collect_position_stats, compute_delta
from src.stream_cache.services.state_tracker import buffer_false_positives, run_episode

logger = logging.getLogger(__name__)

ORACLE_TOLERANCE = 1e-6
STALE_MIN_DIVERGENCE = 1e-3


@dataclass
class SuiteResult:
    """1スイート分の結果"""
    name: str
    checks: int = 0
    failures: List[str] = field(default_factory=list)
    skipped: bool = False

    @property
    def passed(self) -> bool:
        return not self.failures

    def expect(self, condition: bool, message: str) -> bool:
        self.checks += 1
        if not condition:
            self.failures.append(message)
        return bool(condition)

    def to_dict(self) -> Dict:
        return {
            "suite": self.name,
            "passed": self.passed,
            "skipped": self.skipped,
            "checks": self.checks,
            "failures": list(self.failures),
        }


@dataclass
class CheckOptions:
    """検査スイートの入力"""
    stream: StreamConfig = field(default_factory=StreamConfig)
    steps: int = 200
    seeds: Sequence[int] = tuple(range(10))
    position_steps: int = 20_000
    pipeline_chunks: int = 1000
    pipeline_rows: Optional[PipelineGrid] = None
    # 分離型アテンションの代わりに古い回転キャッシュを使う（変異検査）
    decoupled_variant: AttentionVariant = AttentionVariant.DECOUPLED


# 既定の4行（バックエンド, L, DiT, VAE, 実測スループット）
_DEFAULT_TIMING_ROWS = [
    ("wan", 3, 501, 432, 789),
    ("wan", 1, 504, 236, 596),
    ("taehv", 3, 363, 9, 409),
    ("taehv", 1, 361, 9, 406),
]


def _default_grid() -> PipelineGrid:
    return PipelineGrid(
        base=PipelineConfig(write_latency_ms=37),
        grid=[
            GridPoint(
                backend=backend,
                overlap_frames=l,
                dit_latency_ms=dit,
                vae_latency_ms=vae,
                measured_throughput_ms=measured,
            )
            for backend, l, dit, vae, measured in _DEFAULT_TIMING_ROWS
        ],
    )


def check_config(options: CheckOptions) -> SuiteResult:
    suite = SuiteResult("config")
    try:
        validate_config(options.stream)
        suite.expect(True, "")
    except ConfigError as e:
        suite.expect(False, f"configured stream invalid: {e}")

    for k_recent, cap_c, ok in [(7, 16, True), (7, 7, True), (7, 6, False)]:
        try:
            validate_config(StreamConfig(k_recent=k_recent, cap_c=cap_c))
            suite.expect(ok, f"k_recent={k_recent}, cap_c={cap_c} accepted")
        except ConfigError as e:
            suite.expect(not ok and e.invariant == "cap_c < k_recent", f"unexpected rejection: {e}")
    return suite


def check_prompt(options: CheckOptions) -> SuiteResult:
    suite = SuiteResult("prompt")
    two = format_prompt(ActionPrompt.from_pairs([("Player", "Roll forward"), ("Boss", "Tail swipe")]))
    suite.expect(
        two == "Player performs Roll forward. Boss performs Tail swipe.",
        f"two-slot template mismatch: {two!r}",
    )
    for k in range(1, 6):
        text = format_prompt(ActionPrompt.from_pairs([(f"Entity{i}", "Standing") for i in range(k)]))
        suite.expect(text.count(" performs ") == k, f"{k} slots gave {text.count(' performs ')} segments")
    try:
        format_prompt(ActionPrompt(slots=[]))
        suite.expect(False, "empty prompt accepted")
    except PromptError:
        suite.expect(True, "")
    return suite


def check_rope_positions(options: CheckOptions) -> SuiteResult:
    suite = SuiteResult("rope_positions")
    cfg = options.stream
    suite.expect(compute_delta(5, 16) == 0, "delta(5, 16) != 0")
    suite.expect(compute_delta(100, 16) == 84, "delta(100, 16) != 84")
    suite.expect(compute_delta(16, 16) == 0, "delta(16, 16) != 0")

    stats = collect_position_stats(cfg, options.position_steps)
    suite.expect(stats.max_local <= cfg.cap_c, f"local position {stats.max_local} above cap {cfg.cap_c}")
    suite.expect(stats.sink_always_zero, "sink left local position 0")
    suite.expect(
        stats.max_frames_held <= cfg.max_cached_frames,
        f"cache held {stats.max_frames_held} frames (bound {cfg.max_cached_frames})",
    )
    suite.expect(stats.full_window_gaps_exact, "full-window target distances are not exactly 1..k_recent")
    return suite


def check_masks(options: CheckOptions, text_len: int = 4) -> SuiteResult:
    suite = SuiteResult("masks")
    cfg = options.stream
    self_mask = build_self_mask(cfg)
    cross_mask = build_cross_mask(cfg, text_len)
    suite.expect(
        int(self_mask.sum()) == expected_self_true_count(cfg),
        f"self mask true count {int(self_mask.sum())} != {expected_self_true_count(cfg)}",
    )
    suite.expect(
        int(cross_mask.sum()) == expected_cross_true_count(cfg, text_len),
        f"cross mask true count {int(cross_mask.sum())} != {expected_cross_true_count(cfg, text_len)}",
    )

    # テキストを変えても履歴行の出力は変わらない
    rng = np.random.default_rng(0)
    n, d = self_mask.shape[0], cfg.head_dim
    q, k, v = (rng.standard_normal((n, d)) for _ in range(3))
    text_k, text_v = rng.standard_normal((text_len, d)), rng.standard_normal((text_len, d))
    base = context_attention(q, k, v, text_k, text_v, self_mask, cross_mask)
    perturbed = context_attention(
        q, k, v, text_k + rng.standard_normal(text_k.shape), text_v * 3.0, self_mask, cross_mask
    )
    h = cfg.history_frames * cfg.tokens_per_frame
    suite.expect(np.array_equal(base[:h], perturbed[:h]), "history rows changed under text perturbation")
    suite.expect(not np.array_equal(base[h:], perturbed[h:]), "noisy rows ignore the text")
    return suite


def check_oracle(options: CheckOptions) -> SuiteResult:
    suite = SuiteResult("oracle")
    for seed in options.seeds:
        candidate = run_rollout(options.stream, options.steps, seed, options.decoupled_variant)
        reference = run_rollout(options.stream, options.steps, seed, AttentionVariant.REFERENCE)
        worst = max(step_differences(candidate, reference))
        suite.expect(
            worst <= ORACLE_TOLERANCE,
            f"seed {seed}: {options.decoupled_variant.value} vs reference max diff {worst:.3e}",
        )
    return suite


def check_stale_control(options: CheckOptions) -> SuiteResult:
    suite = SuiteResult("stale_control")
    if options.steps <= options.stream.cap_c:
        suite.skipped = True
        logger.warning(f"steps={options.steps} では位置シフトが起きないため stale_control を省略")
        return suite

    for seed in options.seeds:
        stale = run_rollout(options.stream, options.steps, seed, AttentionVariant.STALE)
        reference = run_rollout(options.stream, options.steps, seed, AttentionVariant.REFERENCE)
        onset = staleness_onset(reference)
        differences = step_differences(stale, reference)
        before = [diff for step, diff in enumerate(differences, 1) if step < onset]
        after = [diff for step, diff in enumerate(differences, 1) if step >= onset]
        suite.expect(max(before) <= ORACLE_TOLERANCE, f"seed {seed}: stale differs before the first shift")
        suite.expect(min(after) > STALE_MIN_DIVERGENCE, f"seed {seed}: stale matches reference after the shift")
    return suite


def check_pipeline(options: CheckOptions) -> SuiteResult:
    suite = SuiteResult("pipeline")
    sequential = simulate(
        PipelineConfig(dit_latency_ms=501, vae_latency_ms=432, write_latency_ms=37, schedule=Schedule.SEQUENTIAL),
        8,
    )
    suite.expect(
        sequential.throughput_ms_per_chunk == 970.0,
        f"sequential throughput {sequential.throughput_ms_per_chunk} != 970",
    )

    grid = options.pipeline_rows or _default_grid()
    for point in grid.grid:
        if point.measured_throughput_ms is None:
            continue
        ideal, serial = bracket(grid.base, point, n_chunks=16)
        measured = point.measured_throughput_ms
        suite.expect(
            ideal <= measured <= serial,
            f"{point.backend}: measured {measured} outside [{ideal}, {serial}]",
        )
        eff_fps, rt_ratio = derived_metrics(measured, grid.base)
        suite.expect(eff_fps > 0 and rt_ratio > 0, f"{point.backend}: non-positive derived metrics")

    # ジッター付きの長い実行で順序と背圧を確認
    for depth in (1, 2, 4):
        cfg = PipelineConfig(
            dit_latency_ms=20, vae_latency_ms=25, write_latency_ms=2, queue_depth=depth,
            vae_jitter_ms=30, jitter_seed=depth,
        )
        result = simulate(cfg, options.pipeline_chunks)
        suite.expect(
            result.emission_indices == list(range(options.pipeline_chunks)),
            f"Q={depth}: emission out of order",
        )
        suite.expect(result.max_queue_occupancy <= depth, f"Q={depth}: occupancy {result.max_queue_occupancy}")
        suite.expect(
            all(job.stalled == (job.occupancy_before_submit == depth) for job in result.jobs),
            f"Q={depth}: stall recorded without a full queue",
        )
        suite.expect(all(job.snapshot_stable for job in result.jobs), f"Q={depth}: snapshot mutated in flight")
    return suite


def _fixture_table() -> PolicyTable:
    rows = [
        PolicyRow(hp_threshold=20, phase=Phase.NORMAL_COMBAT, prompt_template="Horizontal slash"),
        PolicyRow(hp_threshold=10, phase=Phase.STAGGER, prompt_template="Jump back to disengage"),
        PolicyRow(hp_threshold=3, phase=Phase.EXECUTION, prompt_template="Uttering curse"),
        PolicyRow(hp_threshold=0, phase=Phase.TERMINAL, prompt_template="Death"),
    ]
    return PolicyTable(entities={"Boss": EntityPolicy(initial_hp=20, rows=rows)})


def check_state_loop(options: CheckOptions) -> SuiteResult:
    suite = SuiteResult("state_loop")
    table = _fixture_table()
    hit_windows = list(range(3, 31, 3))
    trace = [DamageEvent(window_index=w, entity="Boss", hit=True) for w in hit_windows]

    log = run_episode(trace, table, initial_hp=10, loop_enabled=True)
    suite.expect(log.terminal_triggered, "loop enabled: no terminal transition")
    suite.expect(log.terminal_window == hit_windows[-1], f"terminal at {log.terminal_window}, expected {hit_windows[-1]}")

    bypassed = run_episode(trace, table, initial_hp=10, loop_enabled=False)
    suite.expect(not bypassed.terminal_triggered, "loop disabled: terminal fired")

    spurious = [DamageEvent(window_index=w, entity="Boss", hit=True) for w in (4, 17)]
    buffered = buffer_false_positives(trace, spurious, table, initial_hp=20)
    suite.expect(not buffered.terminal_triggered, "two false positives ended the episode early")

    # 長い軌跡でもフェーズは単調で、遷移ごとに1回だけ注入される
    rng = np.random.default_rng(0)
    long_trace = [
        DamageEvent(window_index=w, entity="Boss", hit=bool(hit))
        for w, hit in enumerate(rng.random(100_000) < 0.0002)
    ]
    long_log = run_episode(long_trace, table, initial_hp=20, loop_enabled=True)
    ranks = [r.phases["Boss"].rank for r in long_log.records]
    suite.expect(all(a <= b for a, b in zip(ranks, ranks[1:])), "phase regressed")
    transitions = sum(1 for a, b in zip(ranks, ranks[1:]) if a != b) + (ranks[0] > Phase.NORMAL_COMBAT.rank)
    suite.expect(
        len(long_log.injected_prompts()) == transitions,
        f"{len(long_log.injected_prompts())} prompts for {transitions} transitions",
    )
    hits = sum(1 for ev in long_trace if ev.hit)
    suite.expect(long_log.final_hp["Boss"] == max(0, 20 - hits), "hp does not match the hit count")
    return suite


SUITES: Dict[str, Callable[[CheckOptions], SuiteResult]] = {
    "config": check_config,
    "prompt": check_prompt,
    "rope_positions": check_rope_positions,
    "masks": check_masks,
    "oracle": check_oracle,
    "stale_control": check_stale_control,
    "pipeline": check_pipeline,
    "state_loop": check_state_loop,
}

# 有効な StreamConfig を前提とするスイート
_NEEDS_VALID_STREAM = {"rope_positions", "masks", "oracle", "stale_control"}


def run_all(options: CheckOptions, names: Optional[Sequence[str]] = None) -> List[SuiteResult]:
    """全スイート（または指定したもの）を実行"""
    selected = list(names) if names else list(SUITES)
    stream_valid = True
    try:
        validate_config(options.stream)
    except ConfigError:
        stream_valid = False

    results = []
    for name in selected:
        if name in _NEEDS_VALID_STREAM and not stream_valid:
            result = SuiteResult(name, skipped=True, failures=["stream config invalid"])
        else:
            try:
                result = SUITES[name](options)
            except StreamCacheError as e:
                logger.error(f"スイート {name} が例外で終了: {e}")
                result = SuiteResult(name, checks=1, failures=[f"raised {type(e).__name__}: {e}"])
        status = "合格" if result.passed else "不合格"
        logger.info(f"スイート {name}: {status} ({result.checks} 件)")
        results.append(result)
    return results
