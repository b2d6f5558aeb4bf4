"""Deterministic JSON emission with fixed float formatting.

The standard json encoder prints floats with the shortest round-trip
representation, which varies in digit count.  Output files promise a
fixed 17-significant-digit format, so this module walks plain Python
structures (dict/list/str/float/int/bool/None) and emits them itself.
Keys are written in sorted order, which makes byte-identical output a
property of the data alone.
"""

import math

import numpy as np

FLOAT_FORMAT = ".17g"


def format_float(x: float) -> str:
    if math.isnan(x) or math.isinf(x):
        raise ValueError("non-finite float in JSON output")
    s = format(float(x), FLOAT_FORMAT)
    # Ensure the token stays a JSON number with a float type on reload.
    if "." not in s and "e" not in s and "E" not in s:
        s += ".0"
    return s


def _escape(s: str) -> str:
    out = ['"']
    for ch in s:
        if ch == '"':
            out.append('\\"')
        elif ch == "\\":
            out.append("\\\\")
        elif ch == "\n":
            out.append("\\n")
        elif ch == "\t":
            out.append("\\t")
        elif ch == "\r":
            out.append("\\r")
        elif ord(ch) < 0x20:
            out.append(f"\\u{ord(ch):04x}")
        else:
            out.append(ch)
    out.append('"')
    return "".join(out)


def _emit(obj, parts: list, indent: int, level: int) -> None:
    pad = " " * (indent * (level + 1))
    closepad = " " * (indent * level)
    if obj is None:
        parts.append("null")
    elif obj is True:
        parts.append("true")
    elif obj is False:
        parts.append("false")
    elif isinstance(obj, str):
        parts.append(_escape(obj))
    elif isinstance(obj, (int, np.integer)) and not isinstance(obj, bool):
        parts.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        parts.append(format_float(float(obj)))
    elif isinstance(obj, np.ndarray):
        _emit(obj.tolist(), parts, indent, level)
    elif isinstance(obj, dict):
        if not obj:
            parts.append("{}")
            return
        parts.append("{\n")
        keys = sorted(obj.keys())
        for i, k in enumerate(keys):
            if not isinstance(k, str):
                raise TypeError(f"JSON object keys must be strings, got {type(k)}")
            parts.append(pad)
            parts.append(_escape(k))
            parts.append(": ")
            _emit(obj[k], parts, indent, level + 1)
            parts.append(",\n" if i < len(keys) - 1 else "\n")
        parts.append(closepad + "}")
    elif isinstance(obj, (list, tuple)):
        if not obj:
            parts.append("[]")
            return
        parts.append("[\n")
        for i, v in enumerate(obj):
            parts.append(pad)
            _emit(v, parts, indent, level + 1)
            parts.append(",\n" if i < len(obj) - 1 else "\n")
        parts.append(closepad + "]")
    else:
        raise TypeError(f"cannot serialize {type(obj)} to JSON")


def dumps(obj, indent: int = 2) -> str:
    parts: list = []
    _emit(obj, parts, indent, 0)
    return "".join(parts)
