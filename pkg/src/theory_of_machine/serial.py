"""JSON with 17-significant-digit floats.

``%.17g`` round-trips every f64 exactly, independent of the reader's
shortest-repr logic.
"""

from __future__ import annotations

import json
import math
from pathlib import Path


def fmt_float(x: float) -> str:
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot serialise non-finite float {x!r}")
    s = "%.17g" % x
    # keep floats recognisably floats
    if "." not in s and "e" not in s and "n" not in s:
        s += ".0"
    return s


def _encode(obj, indent: int, level: int) -> str:
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return fmt_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    pad = "\n" + " " * (indent * (level + 1)) if indent else ""
    end = "\n" + " " * (indent * level) if indent else ""
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{json.dumps(str(k))}:{' ' if indent else ''}{_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{" + pad + ("," + pad).join(items) + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        # numeric lists stay on one line
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in obj):
            return "[" + ",".join(_encode(v, 0, 0) for v in obj) + "]"
        return "[" + pad + ("," + pad).join(_encode(v, indent, level + 1) for v in obj) + end + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dump_json(obj, indent: int = 1) -> str:
    return _encode(obj, indent, 0) + "\n"


def parse_json_file(path: Path, error_cls=ValueError):
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise error_cls(f"{path}: file not found") from None
    except OSError as exc:
        raise error_cls(f"{path}: cannot read ({exc})") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise error_cls(f"{path}: corrupt JSON ({exc})") from exc
