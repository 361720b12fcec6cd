"""Small shared helpers: canonical JSON, labeled sub-seeding."""

from __future__ import annotations

import hashlib
import math


def dumps_canonical(obj, indent: int | None = None) -> str:
    """Serialize to JSON with deterministic key order and exact float round-trip.

    Floats are emitted with ``repr``, the shortest representation that parses
    back to the identical IEEE-754 double, so serialization is byte-stable and
    loss-free. NaN/Inf are rejected (not valid JSON).
    """
    out: list[str] = []
    _emit(obj, out, indent, 0)
    return "".join(out)


def _emit(obj, out: list[str], indent: int | None, depth: int) -> None:
    nl = "" if indent is None else "\n" + " " * (indent * (depth + 1))
    end = "" if indent is None else "\n" + " " * (indent * depth)
    sep = "," if indent is None else ","
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        if not math.isfinite(obj):
            raise ValueError(f"non-finite float not serializable: {obj!r}")
        out.append(repr(obj))
    elif isinstance(obj, str):
        out.append(_escape(obj))
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{")
        for i, key in enumerate(obj):
            if not isinstance(key, str):
                raise TypeError(f"JSON object keys must be str, got {type(key)}")
            if i:
                out.append(sep)
            out.append(nl)
            out.append(_escape(key))
            out.append(": " if indent is not None else ":")
            _emit(obj[key], out, indent, depth + 1)
        out.append(end)
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        if not len(obj):
            out.append("[]")
            return
        out.append("[")
        for i, item in enumerate(obj):
            if i:
                out.append(sep)
            out.append(nl)
            _emit(item, out, indent, depth + 1)
        out.append(end)
        out.append("]")
    else:
        # numpy scalars and similar: defer to their Python equivalents
        if hasattr(obj, "item"):
            _emit(obj.item(), out, indent, depth)
        else:
            raise TypeError(f"not JSON-serializable: {type(obj)}")


_ESCAPES = {"\\": "\\\\", '"': '\\"', "\n": "\\n", "\r": "\\r", "\t": "\\t",
            "\b": "\\b", "\f": "\\f"}


def _escape(s: str) -> str:
    parts = ['"']
    for ch in s:
        if ch in _ESCAPES:
            parts.append(_ESCAPES[ch])
        elif ord(ch) < 0x20:
            parts.append(f"\\u{ord(ch):04x}")
        else:
            parts.append(ch)
    parts.append('"')
    return "".join(parts)


def subseed(seed: int, label: str) -> int:
    """Derive an independent 63-bit seed from a base seed and a role label.

    Stable across platforms and sessions (sha256, not hash()).
    """
    digest = hashlib.sha256(f"{seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def config_hash(obj) -> str:
    """Short stable hash of a JSON-serializable configuration."""
    return hashlib.sha256(dumps_canonical(obj).encode()).hexdigest()[:16]
