"""Scanning policy: allowlists, blocklists and thresholds."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from importlib import resources
from typing import Any

import yaml

# Minimal allowlist modelling a weights-only unpickler: tensors, their rebuild
# helpers and plain containers.
WEIGHTS_ONLY_PICKLE_ALLOWLIST = (
    "torch.Tensor",
    "torch._utils._rebuild_tensor",
    "torch._utils._rebuild_tensor_v2",
    "torch._utils._rebuild_parameter",
    "torch.FloatStorage",
    "torch.DoubleStorage",
    "torch.HalfStorage",
    "torch.BFloat16Storage",
    "torch.LongStorage",
    "torch.IntStorage",
    "torch.ShortStorage",
    "torch.CharStorage",
    "torch.ByteStorage",
    "torch.BoolStorage",
    "collections.OrderedDict",
    "builtins.set",
    "builtins.frozenset",
    "builtins.bytearray",
)


class PolicyError(ValueError):
    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        where = []
        if field is not None:
            where.append(f"field {field!r}")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.field = field
        self.line = line


@dataclass(frozen=True)
class Policy:
    keras_allowlist: tuple[str, ...] = ()
    gadget_blocklist: tuple[str, ...] = ()
    pickle_danger_list: tuple[str, ...] = ()
    pickle_allowlist: tuple[str, ...] | None = None
    skops_trusted: frozenset[str] = frozenset()
    dunder_danger: tuple[str, ...] = ()
    chain_depth_threshold: int = 2
    bytecode_patterns: tuple[bytes, ...] = ()

    def with_changes(self, **changes: Any) -> Policy:
        return _coerce(replace(self, **changes).__dict__)


def fqn_matches(name: str, entries: tuple[str, ...] | list[str], prefix: bool = True) -> bool:
    """True if ``name`` equals an entry, or lies under one when ``prefix``.

    Prefixes match whole dotted segments: ``keras`` covers ``keras.layers``
    but not ``kerasx.layers``.
    """
    for entry in entries:
        if name == entry or (prefix and name.startswith(entry + ".")):
            return True
    return False


_STR_LISTS = ("keras_allowlist", "gadget_blocklist", "pickle_danger_list", "dunder_danger")
_FIELDS = {f.name for f in fields(Policy)}


def _str_list(name: str, value: Any) -> tuple[str, ...]:
    if not isinstance(value, (list, tuple, set, frozenset)) or not all(isinstance(v, str) for v in value):
        raise PolicyError("expected a list of strings", field=name)
    return tuple(value)


def _coerce(raw: dict[str, Any]) -> Policy:
    values: dict[str, Any] = {}
    for name in _STR_LISTS:
        values[name] = _str_list(name, raw[name])
    allow = raw["pickle_allowlist"]
    values["pickle_allowlist"] = None if allow is None else _str_list("pickle_allowlist", allow)
    values["skops_trusted"] = frozenset(_str_list("skops_trusted", raw["skops_trusted"]))
    depth = raw["chain_depth_threshold"]
    if isinstance(depth, bool) or not isinstance(depth, int) or depth < 1:
        raise PolicyError("expected an integer >= 1", field="chain_depth_threshold")
    values["chain_depth_threshold"] = depth
    patterns = raw["bytecode_patterns"]
    if not isinstance(patterns, (list, tuple)):
        raise PolicyError("expected a list of strings", field="bytecode_patterns")
    encoded = []
    for p in patterns:
        if isinstance(p, str):
            p = p.encode("utf-8")
        if not isinstance(p, bytes) or not p:
            raise PolicyError("expected non-empty strings", field="bytecode_patterns")
        encoded.append(p.lower())
    values["bytecode_patterns"] = tuple(encoded)
    return Policy(**values)


def _parse(document: bytes | str) -> dict[str, Any]:
    try:
        data = yaml.safe_load(document)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise PolicyError(f"malformed policy document: {getattr(exc, 'problem', exc)}",
                          line=mark.line + 1 if mark else None) from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise PolicyError("policy document must be a mapping")
    for key in data:
        if key not in _FIELDS:
            raise PolicyError(f"unknown policy field {key!r}", field=str(key))
    return data


_DEFAULT: Policy | None = None


def default_policy() -> Policy:
    """The shipped policy (``default_policy.yaml``)."""
    global _DEFAULT
    if _DEFAULT is None:
        text = resources.files("loadscan").joinpath("default_policy.yaml").read_text("utf-8")
        raw = _parse(text)
        missing = _FIELDS - raw.keys()
        if missing:
            raise PolicyError("shipped policy incomplete", field=sorted(missing)[0])
        _DEFAULT = _coerce(raw)
    return _DEFAULT


def load_policy(document: bytes | str) -> Policy:
    """Parse a YAML/JSON policy document; missing fields keep defaults.

    Raises:
        PolicyError: malformed document, unknown field, or wrong field type.
    """
    overrides = _parse(document)
    base = default_policy()
    raw = {name: getattr(base, name) for name in _FIELDS}
    raw["bytecode_patterns"] = list(base.bytecode_patterns)
    raw.update(overrides)
    return _coerce(raw)
