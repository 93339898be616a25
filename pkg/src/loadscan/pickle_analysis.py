"""Static pickle disassembly and import extraction.

Nothing in this module resolves an import or calls a decoded value: the
stream is decoded opcode by opcode against a table, and a small symbolic
stack tracks just enough (string constants, ``None``, marks and global
references) to resolve ``STACK_GLOBAL`` operands and ``REDUCE`` targets.
"""

from __future__ import annotations

import codecs
import enum
import struct
from dataclasses import dataclass, field
from typing import Any, Callable

from loadscan.policy import Policy, fqn_matches
from loadscan.report import Finding, make_finding

ANALYZER = "pickle"
DYNAMIC_MODULE = "<dynamic>"
MAX_SNIFF_OPS = 64


class Origin(str, enum.Enum):
    GLOBAL = "Global"
    STACK_GLOBAL = "StackGlobal"
    REDUCE_TARGET = "ReduceTarget"


@dataclass(frozen=True)
class PickleOp:
    name: str
    arg: Any
    offset: int


@dataclass(frozen=True)
class ImportRef:
    module: str
    qualname: str
    origin: Origin
    offset: int

    def fqn(self) -> str:
        return f"{self.module}.{self.qualname}"


@dataclass(frozen=True)
class Anomaly:
    rule_id: str
    offset: int
    message: str


@dataclass
class PickleSummary:
    ops: list[PickleOp] = field(default_factory=list)
    imports: list[ImportRef] = field(default_factory=list)
    truncated: bool = False
    anomalies: list[Anomaly] = field(default_factory=list)
    trailing_bytes: int = 0

    @property
    def protocol(self) -> int:
        """Highest protocol any decoded opcode requires (PROTO wins if present)."""
        for op in self.ops[:1]:
            if op.name == "PROTO":
                return op.arg
        return max((_BY_NAME[op.name].proto for op in self.ops), default=0)


class _Stop(Exception):
    """Decoding cannot continue; carries the anomaly to record."""

    def __init__(self, rule_id: str, offset: int, message: str):
        self.anomaly = Anomaly(rule_id, offset, message)


# ---------------------------------------------------------------------------
# argument readers: each takes (data, pos) and returns (value, new_pos)


def _need(data: bytes, pos: int, n: int) -> None:
    if n < 0 or pos + n > len(data):
        raise _Stop("PICKLE-TRUNCATED", pos, f"stream ends inside a {n}-byte argument")


def _fixed(fmt: str) -> Callable[[bytes, int], tuple[Any, int]]:
    st = struct.Struct(fmt)

    def read(data: bytes, pos: int) -> tuple[Any, int]:
        _need(data, pos, st.size)
        return st.unpack_from(data, pos)[0], pos + st.size

    return read


def _line(data: bytes, pos: int) -> tuple[bytes, int]:
    end = data.find(b"\n", pos)
    if end < 0:
        raise _Stop("PICKLE-TRUNCATED", pos, "stream ends inside a newline-terminated argument")
    return data[pos:end], end + 1


def _counted(prefix: str, kind: str) -> Callable[[bytes, int], tuple[Any, int]]:
    st = struct.Struct(prefix)

    def read(data: bytes, pos: int) -> tuple[Any, int]:
        _need(data, pos, st.size)
        n = st.unpack_from(data, pos)[0]
        pos += st.size
        if n < 0:
            raise _Stop("PICKLE-MALFORMED", pos - st.size, "negative length prefix")
        _need(data, pos, n)
        raw = data[pos : pos + n]
        if kind == "str":
            try:
                return raw.decode("utf-8", "surrogatepass"), pos + n
            except UnicodeDecodeError:
                raise _Stop("PICKLE-MALFORMED", pos, "invalid UTF-8 in string argument") from None
        if kind == "latin1":
            return raw.decode("latin-1"), pos + n
        if kind == "long":
            return _long(raw), pos + n
        return raw, pos + n

    return read


def _long(raw: bytes) -> int | str:
    if len(raw) > 64:
        return f"<{len(raw)}-byte integer>"
    return int.from_bytes(raw, "little", signed=True)


def _decimal(data: bytes, pos: int) -> tuple[Any, int]:
    raw, pos = _line(data, pos)
    text = raw.rstrip(b"L").decode("ascii", "replace")
    if len(text) > 64:
        return f"<{len(text)}-digit integer>", pos
    try:
        return int(text), pos
    except ValueError:
        # INT carries "00"/"01" for False/True in protocol 0; anything else is junk.
        raise _Stop("PICKLE-MALFORMED", pos, f"invalid decimal argument {text[:32]!r}") from None


def _float_line(data: bytes, pos: int) -> tuple[Any, int]:
    raw, pos = _line(data, pos)
    try:
        return float(raw), pos
    except ValueError:
        raise _Stop("PICKLE-MALFORMED", pos, "invalid float argument") from None


def _quoted(data: bytes, pos: int) -> tuple[Any, int]:
    raw, new = _line(data, pos)
    if len(raw) >= 2 and raw[:1] == raw[-1:] and raw[:1] in (b"'", b'"'):
        try:
            return codecs.escape_decode(raw[1:-1])[0].decode("latin-1"), new
        except ValueError:
            pass
    raise _Stop("PICKLE-MALFORMED", pos, "STRING argument is not a quoted literal")


def _unicode_line(data: bytes, pos: int) -> tuple[Any, int]:
    raw, pos = _line(data, pos)
    return raw.decode("raw-unicode-escape", "replace"), pos


def _plain_line(data: bytes, pos: int) -> tuple[Any, int]:
    raw, pos = _line(data, pos)
    return raw.decode("utf-8", "replace"), pos


def _two_lines(data: bytes, pos: int) -> tuple[Any, int]:
    module, pos = _plain_line(data, pos)
    name, pos = _plain_line(data, pos)
    return (module, name), pos


def _none(data: bytes, pos: int) -> tuple[Any, int]:
    return None, pos


@dataclass(frozen=True)
class _OpInfo:
    name: str
    code: int
    proto: int
    read: Callable[[bytes, int], tuple[Any, int]]


_u1 = _fixed("<B")
_u2 = _fixed("<H")
_i4 = _fixed("<i")
_u4 = _fixed("<I")
_u8 = _fixed("<Q")

_TABLE = [
    _OpInfo("MARK", ord("("), 0, _none),
    _OpInfo("STOP", ord("."), 0, _none),
    _OpInfo("POP", ord("0"), 0, _none),
    _OpInfo("POP_MARK", ord("1"), 1, _none),
    _OpInfo("DUP", ord("2"), 0, _none),
    _OpInfo("FLOAT", ord("F"), 0, _float_line),
    _OpInfo("INT", ord("I"), 0, _decimal),
    _OpInfo("BININT", ord("J"), 1, _i4),
    _OpInfo("BININT1", ord("K"), 1, _u1),
    _OpInfo("LONG", ord("L"), 0, _decimal),
    _OpInfo("BININT2", ord("M"), 1, _u2),
    _OpInfo("NONE", ord("N"), 0, _none),
    _OpInfo("PERSID", ord("P"), 0, _plain_line),
    _OpInfo("BINPERSID", ord("Q"), 1, _none),
    _OpInfo("REDUCE", ord("R"), 0, _none),
    _OpInfo("STRING", ord("S"), 0, _quoted),
    _OpInfo("BINSTRING", ord("T"), 1, _counted("<i", "latin1")),
    _OpInfo("SHORT_BINSTRING", ord("U"), 1, _counted("<B", "latin1")),
    _OpInfo("UNICODE", ord("V"), 0, _unicode_line),
    _OpInfo("BINUNICODE", ord("X"), 1, _counted("<I", "str")),
    _OpInfo("APPEND", ord("a"), 0, _none),
    _OpInfo("BUILD", ord("b"), 0, _none),
    _OpInfo("GLOBAL", ord("c"), 0, _two_lines),
    _OpInfo("DICT", ord("d"), 0, _none),
    _OpInfo("EMPTY_DICT", ord("}"), 1, _none),
    _OpInfo("APPENDS", ord("e"), 1, _none),
    _OpInfo("GET", ord("g"), 0, _decimal),
    _OpInfo("BINGET", ord("h"), 1, _u1),
    _OpInfo("INST", ord("i"), 0, _two_lines),
    _OpInfo("LONG_BINGET", ord("j"), 1, _u4),
    _OpInfo("LIST", ord("l"), 0, _none),
    _OpInfo("EMPTY_LIST", ord("]"), 1, _none),
    _OpInfo("OBJ", ord("o"), 1, _none),
    _OpInfo("PUT", ord("p"), 0, _decimal),
    _OpInfo("BINPUT", ord("q"), 1, _u1),
    _OpInfo("LONG_BINPUT", ord("r"), 1, _u4),
    _OpInfo("SETITEM", ord("s"), 0, _none),
    _OpInfo("TUPLE", ord("t"), 0, _none),
    _OpInfo("EMPTY_TUPLE", ord(")"), 1, _none),
    _OpInfo("SETITEMS", ord("u"), 1, _none),
    _OpInfo("BINFLOAT", ord("G"), 1, _fixed(">d")),
    _OpInfo("PROTO", 0x80, 2, _u1),
    _OpInfo("NEWOBJ", 0x81, 2, _none),
    _OpInfo("EXT1", 0x82, 2, _u1),
    _OpInfo("EXT2", 0x83, 2, _u2),
    _OpInfo("EXT4", 0x84, 2, _i4),
    _OpInfo("TUPLE1", 0x85, 2, _none),
    _OpInfo("TUPLE2", 0x86, 2, _none),
    _OpInfo("TUPLE3", 0x87, 2, _none),
    _OpInfo("NEWTRUE", 0x88, 2, _none),
    _OpInfo("NEWFALSE", 0x89, 2, _none),
    _OpInfo("LONG1", 0x8A, 2, _counted("<B", "long")),
    _OpInfo("LONG4", 0x8B, 2, _counted("<i", "long")),
    _OpInfo("BINBYTES", ord("B"), 3, _counted("<I", "bytes")),
    _OpInfo("SHORT_BINBYTES", ord("C"), 3, _counted("<B", "bytes")),
    _OpInfo("SHORT_BINUNICODE", 0x8C, 4, _counted("<B", "str")),
    _OpInfo("BINUNICODE8", 0x8D, 4, _counted("<Q", "str")),
    _OpInfo("BINBYTES8", 0x8E, 4, _counted("<Q", "bytes")),
    _OpInfo("EMPTY_SET", 0x8F, 4, _none),
    _OpInfo("ADDITEMS", 0x90, 4, _none),
    _OpInfo("FROZENSET", 0x91, 4, _none),
    _OpInfo("NEWOBJ_EX", 0x92, 4, _none),
    _OpInfo("STACK_GLOBAL", 0x93, 4, _none),
    _OpInfo("MEMOIZE", 0x94, 4, _none),
    _OpInfo("FRAME", 0x95, 4, _u8),
    _OpInfo("BYTEARRAY8", 0x96, 5, _counted("<Q", "bytes")),
    _OpInfo("NEXT_BUFFER", 0x97, 5, _none),
    _OpInfo("READONLY_BUFFER", 0x98, 5, _none),
]
_BY_CODE = {op.code: op for op in _TABLE}
_BY_NAME = {op.name: op for op in _TABLE}

# Symbolic stack tokens. Strings and None are stored as themselves.
_MARK = object()
_OPAQUE = object()


@dataclass(frozen=True)
class _GlobalRef:
    module: str | None
    qualname: str | None


_STRING_OPS = frozenset(
    {"STRING", "BINSTRING", "SHORT_BINSTRING", "UNICODE", "BINUNICODE",
     "SHORT_BINUNICODE", "BINUNICODE8"}
)
_PUSH_OPAQUE = frozenset(
    {"FLOAT", "INT", "BININT", "BININT1", "LONG", "BININT2", "PERSID", "BINFLOAT",
     "NEWTRUE", "NEWFALSE", "LONG1", "LONG4", "BINBYTES", "SHORT_BINBYTES",
     "BINBYTES8", "BYTEARRAY8", "EMPTY_DICT", "EMPTY_LIST", "EMPTY_TUPLE",
     "EMPTY_SET", "NEXT_BUFFER", "EXT1", "EXT2", "EXT4"}
)
_POP_ONE = frozenset({"POP", "APPEND", "BUILD"})
_POP_TO_MARK = frozenset({"POP_MARK", "APPENDS", "SETITEMS", "ADDITEMS"})
_COLLAPSE_MARK = frozenset({"DICT", "LIST", "TUPLE", "FROZENSET"})


class _Machine:
    """Symbolic stack machine; tracks tokens, never objects."""

    def __init__(self, summary: PickleSummary):
        self.summary = summary
        self.stack: list[Any] = []
        self.memo: dict[int, Any] = {}

    def pop(self) -> Any:
        return self.stack.pop() if self.stack else _OPAQUE

    def pop_mark(self) -> list[Any]:
        items: list[Any] = []
        while self.stack:
            item = self.stack.pop()
            if item is _MARK:
                break
            items.append(item)
        items.reverse()
        return items

    def call(self, target: Any, offset: int) -> None:
        if isinstance(target, _GlobalRef):
            self.summary.imports.append(
                ImportRef(target.module or DYNAMIC_MODULE, target.qualname or "<unknown>",
                          Origin.REDUCE_TARGET, offset)
            )

    def step(self, op: PickleOp) -> None:
        name, arg, offset = op.name, op.arg, op.offset
        stack = self.stack
        if name in _STRING_OPS:
            stack.append(arg)
        elif name in _PUSH_OPAQUE:
            stack.append(_OPAQUE)
        elif name == "NONE":
            stack.append(None)
        elif name == "MARK":
            stack.append(_MARK)
        elif name in _POP_ONE:
            self.pop()
        elif name in _POP_TO_MARK:
            self.pop_mark()
        elif name in _COLLAPSE_MARK:
            self.pop_mark()
            stack.append(_OPAQUE)
        elif name == "DUP":
            stack.append(stack[-1] if stack else _OPAQUE)
        elif name == "SETITEM":
            self.pop()
            self.pop()
        elif name in ("TUPLE1", "TUPLE2", "TUPLE3"):
            for _ in range(int(name[-1])):
                self.pop()
            stack.append(_OPAQUE)
        elif name in ("BINPERSID", "READONLY_BUFFER"):
            self.pop()
            stack.append(_OPAQUE)
        elif name == "GLOBAL":
            module, qualname = arg
            self.summary.imports.append(ImportRef(module, qualname, Origin.GLOBAL, offset))
            stack.append(_GlobalRef(module, qualname))
        elif name == "INST":
            module, qualname = arg
            self.pop_mark()
            self.summary.imports.append(ImportRef(module, qualname, Origin.GLOBAL, offset))
            self.call(_GlobalRef(module, qualname), offset)
            stack.append(_OPAQUE)
        elif name == "STACK_GLOBAL":
            qualname = self.pop()
            module = self.pop()
            if isinstance(module, str) and isinstance(qualname, str):
                ref = _GlobalRef(module, qualname)
                self.summary.imports.append(ImportRef(module, qualname, Origin.STACK_GLOBAL, offset))
            else:
                ref = _GlobalRef(None, qualname if isinstance(qualname, str) else None)
                self.summary.imports.append(
                    ImportRef(DYNAMIC_MODULE, ref.qualname or "<unknown>", Origin.STACK_GLOBAL, offset)
                )
            stack.append(ref)
        elif name == "REDUCE":
            self.pop()
            self.call(self.pop(), offset)
            stack.append(_OPAQUE)
        elif name == "NEWOBJ":
            self.pop()
            self.call(self.pop(), offset)
            stack.append(_OPAQUE)
        elif name == "NEWOBJ_EX":
            self.pop()
            self.pop()
            self.call(self.pop(), offset)
            stack.append(_OPAQUE)
        elif name == "OBJ":
            items = self.pop_mark()
            if items:
                self.call(items[0], offset)
            stack.append(_OPAQUE)
        elif name in ("PUT", "BINPUT", "LONG_BINPUT"):
            if isinstance(arg, int):
                self.memo[arg] = stack[-1] if stack else _OPAQUE
        elif name == "MEMOIZE":
            self.memo[len(self.memo)] = stack[-1] if stack else _OPAQUE
        elif name in ("GET", "BINGET", "LONG_BINGET"):
            stack.append(self.memo.get(arg, _OPAQUE) if isinstance(arg, int) else _OPAQUE)
        elif name == "STOP":
            self.pop()
        # PROTO and FRAME have no stack effect.


def _decode(data: bytes, max_ops: int | None = None) -> PickleSummary:
    summary = PickleSummary()
    machine = _Machine(summary)
    pos = 0
    n = len(data)
    while True:
        if max_ops is not None and len(summary.ops) >= max_ops:
            return summary
        if pos >= n:
            summary.truncated = True
            summary.anomalies.append(Anomaly("PICKLE-TRUNCATED", pos, "stream ends before STOP"))
            return summary
        info = _BY_CODE.get(data[pos])
        if info is None:
            summary.truncated = True
            summary.anomalies.append(
                Anomaly("PICKLE-MALFORMED", pos, f"unknown opcode 0x{data[pos]:02x}")
            )
            return summary
        try:
            arg, new_pos = info.read(data, pos + 1)
        except _Stop as stop:
            summary.truncated = True
            summary.anomalies.append(stop.anomaly)
            return summary
        op = PickleOp(info.name, arg, pos)
        summary.ops.append(op)
        if info.name == "PROTO" and arg > 5:
            summary.anomalies.append(Anomaly("PICKLE-MALFORMED", pos, f"unsupported protocol {arg}"))
        elif info.name == "FRAME" and new_pos + arg > n:
            summary.anomalies.append(
                Anomaly("PICKLE-BAD-FRAME", pos, f"frame declares {arg} bytes, {n - new_pos} remain")
            )
        elif info.name in ("EXT1", "EXT2", "EXT4"):
            summary.anomalies.append(
                Anomaly("PICKLE-EXTENSION-CODE", pos, f"extension registry code {arg}")
            )
        machine.step(op)
        pos = new_pos
        if info.name == "STOP":
            summary.trailing_bytes = n - pos
            return summary


def disassemble(data: bytes) -> PickleSummary:
    """Decode the first pickle stream in ``data`` into opcodes and import refs.

    Never raises on malformed input: decoding stops at the first unknown
    opcode or at end of input, with ``truncated`` set and an anomaly
    recording the offset.
    """
    return _decode(data)


def probe(data: bytes) -> int | None:
    """Return the pickle protocol if ``data`` plausibly is a pickle stream.

    Streams starting with PROTO are accepted when their first
    :data:`MAX_SNIFF_OPS` opcodes decode. Unframed streams (protocol 0/1) have
    no magic byte, so they must also decode cleanly through to STOP.
    """
    if not data:
        return None
    if data[0] == 0x80:
        if len(data) < 2 or data[1] > 5:
            return None
        head = _decode(data, MAX_SNIFF_OPS)
        if any(a.rule_id == "PICKLE-MALFORMED" for a in head.anomalies):
            return None
        return data[1]
    if data[0] not in _BY_CODE:
        return None
    head = _decode(data, MAX_SNIFF_OPS)
    if head.truncated:
        return None
    full = head if head.ops[-1].name == "STOP" else _decode(data)
    if full.truncated or len(full.ops) < 2:
        return None
    return min(full.protocol, 1)


def extract_imports(summary: PickleSummary) -> list[ImportRef]:
    """Import references in stream order (GLOBAL, STACK_GLOBAL and call targets)."""
    return sorted(summary.imports, key=lambda ref: (ref.offset, ref.origin != Origin.REDUCE_TARGET))


# Python 2 module names that the unpickler maps onto their Python 3 homes.
_MODULE_ALIASES = {
    "__builtin__": "builtins",
    "copy_reg": "copyreg",
    "posix": "os",
    "nt": "os",
    "commands": "subprocess",
    "cPickle": "pickle",
    "_pickle": "pickle",
}


def normalized_fqns(ref: ImportRef) -> set[str]:
    """The raw FQN plus its aliased spelling, for policy matching."""
    names = {ref.fqn()}
    head, _, rest = ref.module.partition(".")
    if head in _MODULE_ALIASES:
        module = _MODULE_ALIASES[head] + ("." + rest if rest else "")
        names.add(f"{module}.{ref.qualname}")
    return names


def is_dangerous(ref: ImportRef, policy: Policy) -> bool:
    return any(fqn_matches(name, policy.pickle_danger_list) for name in normalized_fqns(ref))


def judge_imports(imports: list[ImportRef], policy: Policy) -> list[Finding]:
    """Turn import references into findings under ``policy``."""
    findings: list[Finding] = []
    for ref in imports:
        locator = f"@{ref.offset}"
        if ref.origin is Origin.REDUCE_TARGET:
            if is_dangerous(ref, policy):
                findings.append(make_finding(
                    "PICKLE-DANGEROUS-REDUCE", f"stream calls {ref.fqn()}", locator, ref.fqn(), ANALYZER))
            continue
        if ref.module == DYNAMIC_MODULE:
            findings.append(make_finding(
                "PICKLE-DYNAMIC-GLOBAL",
                "STACK_GLOBAL operands are not constant strings", locator, ref.qualname, ANALYZER))
            continue
        if is_dangerous(ref, policy):
            findings.append(make_finding(
                "PICKLE-DANGEROUS-IMPORT", f"stream imports {ref.fqn()}", locator, ref.fqn(), ANALYZER))
        elif policy.pickle_allowlist is not None and not any(
            fqn_matches(name, policy.pickle_allowlist, prefix=False) for name in normalized_fqns(ref)
        ):
            findings.append(make_finding(
                "PICKLE-UNKNOWN-IMPORT", f"{ref.fqn()} is not allowlisted", locator, ref.fqn(), ANALYZER))
    return findings


def anomaly_findings(summary: PickleSummary, data: bytes) -> list[Finding]:
    findings = [
        make_finding(a.rule_id, a.message, f"@{a.offset}", data[a.offset : a.offset + 16], ANALYZER)
        for a in summary.anomalies
    ]
    if summary.trailing_bytes:
        end = len(data) - summary.trailing_bytes
        findings.append(make_finding(
            "PICKLE-TRAILING-DATA", f"{summary.trailing_bytes} bytes follow STOP",
            f"@{end}", data[end : end + 16], ANALYZER))
    return findings


def scan_pickle(data: bytes, policy: Policy) -> list[Finding]:
    """Disassemble ``data`` and return every finding it produces."""
    summary = disassemble(data)
    return judge_imports(extract_imports(summary), policy) + anomaly_findings(summary, data)
