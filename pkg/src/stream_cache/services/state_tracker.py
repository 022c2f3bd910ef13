"""
Observer-Tracker-Policy loop over scripted damage traces

Observer: reads `window,entity,hit` CSV traces (stands in for the video event
extractor). Tracker: per-entity integer HP with unbounded horizon. Policy:
HP thresholds → phase labels, injecting a prompt through format_prompt on
every phase transition.
"""

import csv
import itertools
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import yaml
from pydantic import ValidationError

from src.stream_cache.errors import PolicyError, TraceFormatError, UnknownEntityError
from src.stream_cache.models.episode import (
    DamageEvent,
    EntityPolicy,
    EpisodeLog,
    EpisodeRecord,
    Phase,
    PolicyRow,
    PolicyTable,
    TrackerState,
)
from src.stream_cache.models.stream import ActionPrompt
from src.stream_cache.services.prompt_formatter import format_prompt

logger = logging.getLogger(__name__)

TRACE_HEADER = ["window", "entity", "hit"]
DAMAGE_UNIT = 1

TraceSource = Union[str, Path, Iterable[str]]


def _trace_lines(source: TraceSource) -> Iterable[str]:
    # ファイルは Path で渡す。文字列は常に CSV 本文として扱う
    if isinstance(source, Path):
        if not source.is_file():
            raise TraceFormatError(0, f"trace file not found: {source}")
        return source.read_text(encoding="utf-8").splitlines()
    if isinstance(source, str):
        if source.strip() and "\n" not in source and "," not in source:
            raise TraceFormatError(0, f"not CSV text (pass a Path to read a file): {source!r}")
        return source.splitlines()
    return source


def observe_trace(source: TraceSource) -> List[DamageEvent]:
    """CSVトレースを検証済みのイベント列に変換"""
    events: List[DamageEvent] = []
    last_window: Dict[str, int] = {}

    reader = csv.reader(_trace_lines(source))
    for line_number, row in enumerate(reader, 1):
        if not row or all(not cell.strip() for cell in row):
            continue
        cells = [cell.strip() for cell in row]
        if [c.lower() for c in cells] == TRACE_HEADER:
            continue
        if len(cells) != 3:
            raise TraceFormatError(line_number, f"expected 3 fields, got {len(cells)}")

        window_text, entity, hit_text = cells
        try:
            window = int(window_text)
        except ValueError:
            raise TraceFormatError(line_number, f"window is not an integer: {window_text!r}")
        if window < 0:
            raise TraceFormatError(line_number, f"negative window {window}")
        if not entity:
            raise TraceFormatError(line_number, "empty entity")
        if hit_text not in ("0", "1"):
            raise TraceFormatError(line_number, f"hit must be 0 or 1, got {hit_text!r}")
        if window < last_window.get(entity, -1):
            raise TraceFormatError(
                line_number, f"window {window} decreases for {entity} (previous {last_window[entity]})"
            )

        last_window[entity] = window
        events.append(DamageEvent(window_index=window, entity=entity, hit=hit_text == "1"))

    if not events:
        logger.warning("トレースにイベントがありません")
    return events


def tracker_update(state: TrackerState, ev: DamageEvent) -> TrackerState:
    """被弾なら HP を1減らし（下限0）、被弾数を1増やす"""
    if ev.entity not in state.hp:
        raise UnknownEntityError(f"unknown entity {ev.entity!r}")
    if not ev.hit:
        return state

    hp = dict(state.hp)
    hits = dict(state.hits_taken)
    hp[ev.entity] = max(0, hp[ev.entity] - DAMAGE_UNIT)
    hits[ev.entity] = hits.get(ev.entity, 0) + 1
    return TrackerState(hp=hp, hits_taken=hits)


def validate_policy(table: PolicyTable) -> PolicyTable:
    """閾値の単調減少とTerminal行の一意性を検査"""
    for entity, policy in table.entities.items():
        rows = policy.rows
        if not rows:
            raise PolicyError(f"{entity}: no policy rows")
        thresholds = [row.hp_threshold for row in rows]
        if any(a <= b for a, b in zip(thresholds, thresholds[1:])):
            raise PolicyError(f"{entity}: thresholds must be strictly decreasing, got {thresholds}")
        ranks = [row.phase.rank for row in rows]
        if any(a >= b for a, b in zip(ranks, ranks[1:])):
            raise PolicyError(f"{entity}: phases must advance along the table")
        terminal = [row for row in rows if row.phase == Phase.TERMINAL]
        if len(terminal) != 1:
            raise PolicyError(f"{entity}: exactly one Terminal row required, got {len(terminal)}")
        if terminal[0].hp_threshold < 0:
            raise PolicyError(f"{entity}: Terminal threshold must be >= 0")
    return table


def parse_policy_table(data: Dict) -> PolicyTable:
    try:
        table = PolicyTable(**data)
    except ValidationError as e:
        raise PolicyError(f"malformed policy table: {e}") from e
    return validate_policy(table)


def load_policy_table(source: Union[str, Path]) -> PolicyTable:
    """YAMLのポリシーテーブルを読み込む（パスまたはYAML文字列）"""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and source.endswith((".yaml", ".yml"))):
        path = Path(source)
        if not path.exists():
            raise PolicyError(f"policy file missing: {path}")
        text = path.read_text(encoding="utf-8")
    else:
        text = source
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as e:
        raise PolicyError(f"policy parse failure: {e}") from e
    table = parse_policy_table(data)
    logger.info(f"ポリシーテーブルを読み込み: {list(table.entities)}")
    return table


def _row_for_hp(policy: EntityPolicy, hp: int) -> PolicyRow:
    # hp 以上の閾値のうち最小のもの。どれにも該当しなければ先頭行
    candidates = [row for row in policy.rows if row.hp_threshold >= hp]
    return candidates[-1] if candidates else policy.rows[0]


def _row_for_phase(policy: EntityPolicy, phase: Phase) -> PolicyRow:
    return next(row for row in policy.rows if row.phase == phase)


@dataclass(frozen=True)
class PolicyDecision:
    """ポリシー1ステップの結果"""
    phase: Phase
    prompt: Optional[str]
    action: str
    injected: Optional[ActionPrompt] = None

    @property
    def transitioned(self) -> bool:
        return self.prompt is not None


def policy_step(
    state: TrackerState,
    table: PolicyTable,
    entity: str,
    previous_phase: Optional[Phase] = None,
    current_actions: Optional[Dict[str, str]] = None,
    window_index: Optional[int] = None,
) -> PolicyDecision:
    """現在HPからフェーズを決め、前ステップから変化したときだけプロンプトを注入"""
    if entity not in table.entities:
        raise UnknownEntityError(f"no policy for entity {entity!r}")
    policy = table.entities[entity]
    computed = _row_for_hp(policy, state.hp[entity]).phase

    # フェーズは後戻りしない
    phase = computed
    if previous_phase is not None and previous_phase.rank > computed.rank:
        phase = previous_phase
    row = _row_for_phase(policy, phase)

    if previous_phase is None or phase == previous_phase:
        action = (current_actions or {}).get(entity, policy.idle_action)
        return PolicyDecision(phase=phase, prompt=None, action=action)

    actions = dict(current_actions or {})
    actions[entity] = row.prompt_template
    slots = [(name, actions.get(name, table.entities[name].idle_action)) for name in table.entities]
    injected = ActionPrompt.from_pairs(slots, window_index=window_index if window_index is not None else 0)
    return PolicyDecision(phase=phase, prompt=format_prompt(injected), action=row.prompt_template, injected=injected)


def _initial_hp(table: PolicyTable, initial_hp: Union[None, int, Dict[str, int]]) -> Dict[str, int]:
    if initial_hp is None:
        return {entity: policy.initial_hp for entity, policy in table.entities.items()}
    if isinstance(initial_hp, int):
        return {entity: initial_hp for entity in table.entities}
    missing = set(table.entities) - set(initial_hp)
    return {**{entity: table.entities[entity].initial_hp for entity in missing}, **initial_hp}


def run_episode(
    trace: Sequence[DamageEvent],
    table: PolicyTable,
    initial_hp: Union[None, int, Dict[str, int]] = None,
    loop_enabled: bool = True,
) -> EpisodeLog:
    """トレースを窓ごとに処理し、フェーズ遷移と終端を記録"""
    hp0 = _initial_hp(table, initial_hp)
    state = TrackerState.initial(hp0)
    actions = {entity: policy.idle_action for entity, policy in table.entities.items()}
    phases = {entity: _row_for_hp(table.entities[entity], hp0[entity]).phase for entity in table.entities}
    log = EpisodeLog(loop_enabled=loop_enabled)

    ordered = sorted(trace, key=lambda ev: ev.window_index)
    for window, group in itertools.groupby(ordered, key=lambda ev: ev.window_index):
        events = list(group)
        prompts: List[str] = []
        transitions: List[str] = []

        if loop_enabled:
            for ev in events:
                state = tracker_update(state, ev)
            for entity in table.entities:
                decision = policy_step(state, table, entity, phases[entity], actions, window_index=window)
                if decision.transitioned:
                    prompts.append(decision.prompt)
                    transitions.append(entity)
                    actions[entity] = decision.action
                    logger.debug(f"窓 {window}: {entity} が {decision.phase.value} に遷移")
                phases[entity] = decision.phase
                if decision.phase == Phase.TERMINAL and not log.terminal_triggered:
                    log.terminal_triggered = True
                    log.terminal_window = window
                    log.terminal_entity = entity
                    logger.info(f"終端遷移: entity={entity}, window={window}")

        log.records.append(
            EpisodeRecord(
                window_index=window,
                hp=dict(state.hp),
                hits_taken=dict(state.hits_taken),
                phases=dict(phases),
                injected_prompts=prompts,
                transitions=transitions,
            )
        )

    log.final_hp = dict(state.hp)
    return log


def buffer_false_positives(
    trace: Sequence[DamageEvent],
    spurious: Sequence[DamageEvent],
    table: PolicyTable,
    initial_hp: Union[None, int, Dict[str, int]] = None,
) -> EpisodeLog:
    """誤検出を混ぜたトレースで閾値がどこまで吸収するかを確認"""
    merged = sorted([*trace, *spurious], key=lambda ev: ev.window_index)
    log = run_episode(merged, table, initial_hp=initial_hp, loop_enabled=True)
    true_hits = sum(1 for ev in trace if ev.hit)
    false_hits = sum(1 for ev in spurious if ev.hit)
    logger.info(
        f"誤検出バッファ: 真の被弾 {true_hits}, 誤検出 {false_hits}, "
        f"終端={'あり' if log.terminal_triggered else 'なし'}"
    )
    return log


@dataclass(frozen=True)
class ScriptedProtocol:
    """一定間隔で攻撃プロンプトを注入するテスト手順"""
    events: List[DamageEvent]
    attack_windows: List[int]
    attack_prompts: List[str]


def scripted_attack_trace(
    attacker: str,
    target: str,
    attack_action: str,
    n_windows: int,
    calibration_windows: int,
    interval: int,
    hit_every: int = 1,
) -> ScriptedProtocol:
    """較正期間の後、interval 窓ごとに攻撃を注入し、hit_every 回に1回被弾を観測する"""
    if interval < 1:
        raise ValueError("interval must be >= 1")
    events: List[DamageEvent] = []
    attack_windows: List[int] = []
    prompts: List[str] = []
    for count, window in enumerate(range(calibration_windows, n_windows, interval)):
        attack_windows.append(window)
        prompts.append(format_prompt(ActionPrompt.from_pairs([(attacker, attack_action)], window_index=window)))
        events.append(DamageEvent(window_index=window, entity=target, hit=count % hit_every == 0))
    return ScriptedProtocol(events=events, attack_windows=attack_windows, attack_prompts=prompts)
