"""
Exception hierarchy for the stream cache package
"""


class StreamCacheError(Exception):
    """パッケージ共通の基底例外"""


class ConfigError(StreamCacheError):
    """設定の不変条件違反"""

    def __init__(self, invariant: str, detail: str = ""):
        self.invariant = invariant
        message = invariant if not detail else f"{invariant} ({detail})"
        super().__init__(message)


class CacheOrderError(StreamCacheError):
    """キャッシュへの順序違反の挿入・参照"""


class EmptyCacheError(StreamCacheError):
    """空のキャッシュに対するアテンション"""


class PositionError(StreamCacheError):
    """位置割り当てが欠けているフレーム"""


class TraceFormatError(StreamCacheError):
    """イベントトレースの書式エラー"""

    def __init__(self, line_number: int, reason: str):
        self.line_number = line_number
        self.reason = reason
        super().__init__(f"line {line_number}: {reason}")


class UnknownEntityError(StreamCacheError):
    """ポリシーに存在しないエンティティ"""


class PolicyError(StreamCacheError):
    """ポリシーテーブルの不整合"""


class TraceLengthError(StreamCacheError):
    """比較するトレースの長さ不一致"""


class InvariantViolation(StreamCacheError):
    """検査スイートで検出された不変条件違反"""


class PromptError(StreamCacheError):
    """プロンプトのスロット構成エラー"""
