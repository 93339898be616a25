"""JSON helpers that survive hostile nesting depth.

``json.loads`` recurses in C and gives up around the interpreter recursion
limit. Model configs are attacker-controlled, so a deeply nested document
must still parse; the iterative fallback here handles that case.
"""

from __future__ import annotations

import json
import re
from json.decoder import scanstring
from json.scanner import NUMBER_RE
from typing import Any

_WS = re.compile(r"[ \t\n\r]*")
_LITERALS = {
    "true": True,
    "false": False,
    "null": None,
    "NaN": float("nan"),
    "Infinity": float("inf"),
    "-Infinity": float("-inf"),
}


def decode_text(data: bytes) -> str:
    """Decode a UTF-8 document, tolerating a leading BOM."""
    return data.decode("utf-8-sig")


def loads(data: bytes | str) -> Any:
    """Parse a complete JSON document.

    Raises:
        ValueError: the document is not valid JSON or not valid UTF-8.
    """
    text = decode_text(data) if isinstance(data, bytes) else data
    try:
        return json.loads(text)
    except RecursionError:
        value, end = _scan_deep(text, _WS.match(text, 0).end())
        end = _WS.match(text, end).end()
        if end != len(text):
            raise ValueError(f"extra data at char {end}") from None
        return value


def raw_decode(text: str, idx: int = 0) -> tuple[Any, int]:
    """Parse one JSON value starting at ``idx``; return it and the end index."""
    try:
        return json.JSONDecoder().raw_decode(text, idx)
    except RecursionError:
        return _scan_deep(text, idx)


def _number_or_literal(s: str, pos: int) -> tuple[Any, int]:
    m = NUMBER_RE.match(s, pos)
    if m is not None and m.end() > pos:
        integer, frac, exp = m.groups()
        if frac or exp:
            return float(integer + (frac or "") + (exp or "")), m.end()
        return int(integer), m.end()
    for word, value in _LITERALS.items():
        if s.startswith(word, pos):
            return value, pos + len(word)
    raise ValueError(f"expecting value at char {pos}")


def _key(s: str, pos: int) -> tuple[str, int]:
    if s[pos : pos + 1] != '"':
        raise ValueError(f"expecting property name at char {pos}")
    key, pos = scanstring(s, pos + 1)
    pos = _WS.match(s, pos).end()
    if s[pos : pos + 1] != ":":
        raise ValueError(f"expecting ':' at char {pos}")
    return key, _WS.match(s, pos + 1).end()


def _scan_deep(s: str, pos: int) -> tuple[Any, int]:
    # Explicit stack of (container, pending key); no Python recursion.
    stack: list[tuple[dict | list, str | None]] = []
    while True:
        ch = s[pos : pos + 1]
        if ch == "{":
            pos = _WS.match(s, pos + 1).end()
            if s[pos : pos + 1] == "}":
                value: Any = {}
                pos += 1
            else:
                key, pos = _key(s, pos)
                stack.append(({}, key))
                continue
        elif ch == "[":
            pos = _WS.match(s, pos + 1).end()
            if s[pos : pos + 1] == "]":
                value = []
                pos += 1
            else:
                stack.append(([], None))
                continue
        elif ch == '"':
            value, pos = scanstring(s, pos + 1)
        else:
            value, pos = _number_or_literal(s, pos)

        while True:
            if not stack:
                return value, pos
            container, key = stack[-1]
            if isinstance(container, dict):
                container[key] = value
            else:
                container.append(value)
            pos = _WS.match(s, pos).end()
            ch = s[pos : pos + 1]
            if ch == ",":
                pos = _WS.match(s, pos + 1).end()
                if isinstance(container, dict):
                    key, pos = _key(s, pos)
                    stack[-1] = (container, key)
                break
            if ch == ("}" if isinstance(container, dict) else "]"):
                pos += 1
                stack.pop()
                value = container
                continue
            raise ValueError(f"expecting ',' or closing bracket at char {pos}")


def pointer(parts: list[str | int]) -> str:
    """Build an RFC 6901 JSON pointer from path components."""
    return "".join("/" + str(p).replace("~", "~0").replace("/", "~1") for p in parts)


def child_pointer(base: str, part: str | int) -> str:
    return base + "/" + str(part).replace("~", "~0").replace("/", "~1")


def resolve(doc: Any, ptr: str) -> Any:
    """Follow a JSON pointer into ``doc``.

    Raises:
        KeyError: the pointer does not address a value.
    """
    if ptr == "":
        return doc
    if not ptr.startswith("/"):
        raise KeyError(ptr)
    cur = doc
    for raw in ptr[1:].split("/"):
        part = raw.replace("~1", "/").replace("~0", "~")
        if isinstance(cur, dict):
            if part not in cur:
                raise KeyError(ptr)
            cur = cur[part]
        elif isinstance(cur, list):
            if not part.isdigit() or int(part) >= len(cur):
                raise KeyError(ptr)
            cur = cur[int(part)]
        else:
            raise KeyError(ptr)
    return cur
