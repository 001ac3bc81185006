"""
Delimited tables and key-value summaries
Numbers are written with 17 significant digits; the first line of every file is a
timestamp comment and the only part that changes between identical runs
"""
import csv
import io
import math
from datetime import datetime, timezone
from typing import Any, Iterable, List, Mapping, Sequence, Tuple

import numpy as np

SIGNIFICANT_DIGITS = 17
HEADER_PREFIX = '# generated '


def format_value(value: Any) -> str:
    """Render one cell; floats use 17 significant digits"""
    if isinstance(value, (bool, np.bool_)):
        return 'true' if value else 'false'
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return 'nan'
        if math.isinf(value):
            return 'inf' if value > 0 else '-inf'
        return f"{value:.{SIGNIFICANT_DIGITS}g}"
    if isinstance(value, (tuple, list, np.ndarray)):
        return ';'.join(format_value(v) for v in value)
    if isinstance(value, Mapping):
        return ';'.join(f"{k}={format_value(v)}" for k, v in sorted(value.items()))
    return str(value)


def timestamp_line() -> str:
    return f"{HEADER_PREFIX}{datetime.now(timezone.utc).isoformat(timespec='seconds')}"


def render_table(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_value(v) for v in row])
    return buffer.getvalue()


def render_summary(values: Mapping[str, Any]) -> str:
    return ''.join(f"{key} = {format_value(values[key])}\n" for key in values)


def strip_timestamp(text: str) -> str:
    """Drop the timestamp line so two runs can be compared byte for byte"""
    lines = text.splitlines(keepends=True)
    if lines and lines[0].startswith(HEADER_PREFIX):
        lines = lines[1:]
    return ''.join(lines)


def read_table(path: str) -> Tuple[List[str], List[List[str]]]:
    with open(path, 'r', newline='') as f:
        rows = [row for row in csv.reader(line for line in f if not line.startswith('#'))]
    return (rows[0], rows[1:]) if rows else ([], [])
