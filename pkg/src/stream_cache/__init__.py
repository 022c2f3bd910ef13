"""
Stream Cache Package
ストリーミング推論基盤（KVキャッシュ・パイプライン・状態ループ）のデスクスケール実装
"""

__version__ = "0.1.0"
__author__ = "AI Engineering Team"
__description__ = "Bounded-RoPE streaming KV-cache, decode pipeline simulator and entity state loop"
