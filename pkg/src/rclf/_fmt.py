"""Canonical text formatting for CSV/JSON artifacts.

All float output is fixed at 17 significant digits so that reports are
byte-identical across runs and round-trip through ``float()`` exactly.
"""

from __future__ import annotations

import math
from typing import Any

__all__ = ["fmt_float", "csv_line", "dumps_canonical"]


def fmt_float(x: float) -> str:
    """Format a float with 17 significant digits (exact float64 round-trip)."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def csv_line(values) -> str:
    """One CSV row: floats canonicalized, everything else via ``str``."""
    parts = []
    for v in values:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            parts.append(str(v))
        elif isinstance(v, int):
            parts.append(str(v))
        else:
            parts.append(fmt_float(v))
    return ",".join(parts)


def _encode(obj: Any, indent: int, level: int, out: list) -> None:
    pad = " " * (indent * level)
    inner = " " * (indent * (level + 1))
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        if math.isnan(obj) or math.isinf(obj):
            # JSON has no literals for these; encode as strings rather than
            # emitting invalid output.
            out.append('"%s"' % fmt_float(obj))
        else:
            out.append(fmt_float(obj))
    elif isinstance(obj, str):
        out.append(
            '"'
            + obj.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n")
            + '"'
        )
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        for i, (k, v) in enumerate(obj.items()):
            if not isinstance(k, str):
                raise TypeError(f"JSON object keys must be strings, got {k!r}")
            out.append(f'{inner}"{k}": ')
            _encode(v, indent, level + 1, out)
            out.append(",\n" if i < len(obj) - 1 else "\n")
        out.append(pad + "}")
    elif isinstance(obj, (list, tuple)):
        if len(obj) == 0:
            out.append("[]")
            return
        out.append("[\n")
        for i, v in enumerate(obj):
            out.append(inner)
            _encode(v, indent, level + 1, out)
            out.append(",\n" if i < len(obj) - 1 else "\n")
        out.append(pad + "]")
    else:
        # numpy scalars and similar duck-typed numbers
        if hasattr(obj, "item"):
            _encode(obj.item(), indent, level, out)
        else:
            raise TypeError(f"cannot serialize {type(obj).__name__} to JSON")


def dumps_canonical(obj: Any, indent: int = 2) -> str:
    """Serialize nested dict/list structures to deterministic JSON text.

    Unlike ``json.dumps`` this pins float formatting to 17 significant
    digits, which the stdlib encoder does not expose.
    """
    out: list = []
    _encode(obj, indent, 0, out)
    out.append("\n")
    return "".join(out)
