"""
Multi-entity prompt template and action vocabulary loading
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

from src.stream_cache.errors import ConfigError, PromptError
from src.stream_cache.models.stream import ActionPrompt

logger = logging.getLogger(__name__)

SEGMENT_TEMPLATE = "{entity} performs {action}."

# 既定の語彙サイズ（プレイヤー13、ボス統合語彙47）
DEFAULT_SECTION_SIZES = {"player": 13, "boss": 47}


def format_prompt(prompt: ActionPrompt) -> str:
    """スロットを "<Entity> performs <action>." で連結"""
    if not prompt.slots:
        raise PromptError("prompt has no slots")

    names = [slot.entity_name for slot in prompt.slots]
    if len(set(names)) != len(names):
        raise PromptError(f"duplicate entity names: {names}")

    segments = [
        SEGMENT_TEMPLATE.format(entity=slot.entity_name, action=slot.action_text)
        for slot in prompt.slots
    ]
    return " ".join(segments)


@dataclass
class ActionVocabulary:
    """エンティティ種別ごとのアクション語彙"""
    sections: Dict[str, List[str]] = field(default_factory=dict)

    def size(self, section: str) -> int:
        return len(self.sections.get(section, []))

    def contains(self, section: str, action: str) -> bool:
        return action in self.sections.get(section, [])

    def to_dict(self) -> Dict[str, List[str]]:
        return {name: list(actions) for name, actions in self.sections.items()}


def parse_vocabulary(
    text: str,
    expected_sizes: Optional[Dict[str, int]] = None,
) -> ActionVocabulary:
    """[section] 見出しと1行1アクションの語彙ファイルを解析"""
    sections: Dict[str, List[str]] = {}
    current: Optional[str] = None

    for line_number, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().lower()
            if current in sections:
                raise ConfigError("duplicate vocabulary section", f"line {line_number}: {current}")
            sections[current] = []
            continue
        if current is None:
            raise ConfigError("action outside section", f"line {line_number}")
        if line in sections[current]:
            raise ConfigError("duplicate action", f"line {line_number}: {line}")
        sections[current].append(line)

    expected_sizes = DEFAULT_SECTION_SIZES if expected_sizes is None else expected_sizes
    for name, size in expected_sizes.items():
        actual = len(sections.get(name, []))
        if actual != size:
            raise ConfigError("vocabulary size mismatch", f"{name}: expected {size}, got {actual}")

    return ActionVocabulary(sections=sections)


def load_vocabulary(
    path: Union[str, Path],
    expected_sizes: Optional[Dict[str, int]] = None,
) -> ActionVocabulary:
    """語彙ファイルを読み込む"""
    path = Path(path)
    if not path.exists():
        raise ConfigError("vocabulary file missing", str(path))
    vocabulary = parse_vocabulary(path.read_text(encoding="utf-8"), expected_sizes)
    sizes = {name: len(actions) for name, actions in vocabulary.sections.items()}
    logger.info(f"アクション語彙を読み込み: {path} {sizes}")
    return vocabulary
