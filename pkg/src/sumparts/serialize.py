"""Deterministic artifact serialization.

All floats are rounded to 9 significant digits before writing and JSON
keys are sorted, so reruns of the same computation produce byte-identical
files on any platform.  Writes go to a temp file in the target directory
followed by an atomic rename.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

__all__ = [
    "format_float",
    "round_floats",
    "stable_json_dumps",
    "write_text_atomic",
    "write_json_atomic",
    "write_csv_atomic",
]


def format_float(x: float) -> str:
    """Fixed 9-significant-digit text form of a float."""
    return format(float(x), ".9g")


def round_floats(obj):
    """Recursively round floats (and numpy scalars/arrays) to 9 significant
    digits, converting numpy containers to plain Python types."""
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(format_float(obj))
    if isinstance(obj, np.ndarray):
        return [round_floats(v) for v in obj.tolist()]
    if isinstance(obj, dict):
        return {str(k): round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_floats(v) for v in obj]
    return obj


def stable_json_dumps(obj) -> str:
    return json.dumps(round_floats(obj), sort_keys=True, indent=2) + "\n"


def write_text_atomic(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json_atomic(path, obj) -> None:
    write_text_atomic(path, stable_json_dumps(obj))


def write_csv_atomic(path, header, rows) -> None:
    """Write rows of mixed str/number cells; floats use the fixed format."""
    def cell(v):
        if isinstance(v, (float, np.floating)):
            return format_float(v)
        return str(v)

    lines = [",".join(header)]
    lines.extend(",".join(cell(v) for v in row) for row in rows)
    write_text_atomic(path, "\n".join(lines) + "\n")
