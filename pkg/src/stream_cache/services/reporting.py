"""
Report writers (CSV and JSON lines)
"""

import csv
import io
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, TextIO, Union

from src.stream_cache.errors import ConfigError

logger = logging.getLogger(__name__)

REPORT_FORMATS = ("csv", "jsonl")

# パイプラインレポートの列順
PIPELINE_COLUMNS = ["backend", "L", "Q", "mode", "throughput_ms", "eff_fps", "rt_ratio", "max_queue"]


def check_format(fmt: str) -> str:
    fmt = fmt.lower()
    if fmt not in REPORT_FORMATS:
        raise ConfigError("unknown report format", f"{fmt} (expected csv or jsonl)")
    return fmt


def _cell(value: Any) -> Any:
    if isinstance(value, float):
        return round(value, 4)
    if isinstance(value, (dict, list)):
        return json.dumps(value, ensure_ascii=False)
    if value is None:
        return ""
    return value


def render_csv(rows: Sequence[Dict[str, Any]], columns: Optional[List[str]] = None) -> str:
    """辞書の列をCSV文字列に変換"""
    if columns is None:
        columns = list(rows[0]) if rows else []
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({key: _cell(row.get(key)) for key in columns})
    return buffer.getvalue()


def render_jsonl(rows: Sequence[Dict[str, Any]]) -> str:
    """1行1レコードのJSON lines"""
    return "".join(json.dumps(row, ensure_ascii=False, default=str) + "\n" for row in rows)


def render(rows: Sequence[Dict[str, Any]], fmt: str, columns: Optional[List[str]] = None) -> str:
    if check_format(fmt) == "csv":
        return render_csv(rows, columns)
    return render_jsonl(rows)


def write_report(
    rows: Sequence[Dict[str, Any]],
    fmt: str,
    out: Union[None, str, Path, TextIO] = None,
    columns: Optional[List[str]] = None,
) -> str:
    """レポートを書き出し、書いた文字列を返す（out が None なら書き出さない）"""
    text = render(rows, fmt, columns)
    if out is None:
        return text
    if isinstance(out, (str, Path)):
        path = Path(out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
        logger.info(f"レポートを保存: {path} ({len(rows)} 行, {fmt})")
    else:
        out.write(text)
    return text
