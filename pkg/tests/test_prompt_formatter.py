import pytest

from src.stream_cache.config import settings
from src.stream_cache.errors import ConfigError, PromptError
from src.stream_cache.models.stream import ActionPrompt
from src.stream_cache.services.prompt_formatter import format_prompt, load_vocabulary, parse_vocabulary


def test_two_slot_template():
    prompt = ActionPrompt.from_pairs([("Player", "Roll forward"), ("Boss", "Tail swipe")])
    assert format_prompt(prompt) == "Player performs Roll forward. Boss performs Tail swipe."


def test_single_slot():
    assert format_prompt(ActionPrompt.from_pairs([("Player", "Standing")])) == "Player performs Standing."


@pytest.mark.parametrize("k", [1, 2, 3, 5])
def test_k_slots_give_k_segments_in_order(k):
    pairs = [(f"Entity{i}", f"Action {i}") for i in range(k)]
    text = format_prompt(ActionPrompt.from_pairs(pairs))
    assert text.count(" performs ") == k
    positions = [text.index(f"Entity{i} performs") for i in range(k)]
    assert positions == sorted(positions)


def test_empty_prompt_rejected():
    with pytest.raises(PromptError):
        format_prompt(ActionPrompt(slots=[]))


def test_duplicate_entity_rejected():
    with pytest.raises(PromptError):
        format_prompt(ActionPrompt.from_pairs([("Boss", "Tail swipe"), ("Boss", "Staff slam")]))


def test_shipped_vocabulary_sizes():
    vocabulary = load_vocabulary(settings.vocabulary_path)
    assert vocabulary.size("player") == 13
    assert vocabulary.size("boss") == 47
    assert vocabulary.contains("boss", "Tail swipe")
    assert vocabulary.contains("player", "Roll forward")


def test_vocabulary_size_mismatch():
    with pytest.raises(ConfigError) as exc:
        parse_vocabulary("[player]\nStanding\n", expected_sizes={"player": 2})
    assert exc.value.invariant == "vocabulary size mismatch"


def test_vocabulary_duplicates_and_orphans():
    with pytest.raises(ConfigError) as exc:
        parse_vocabulary("[player]\nStanding\nStanding\n", expected_sizes={})
    assert exc.value.invariant == "duplicate action"

    with pytest.raises(ConfigError) as exc:
        parse_vocabulary("Standing\n[player]\n", expected_sizes={})
    assert exc.value.invariant == "action outside section"


def test_vocabulary_comments_skipped():
    vocabulary = parse_vocabulary("# header\n[boss]\nTail swipe\n\n# note\nStaff slam\n", expected_sizes={"boss": 2})
    assert vocabulary.to_dict() == {"boss": ["Tail swipe", "Staff slam"]}
