"""Keras model analysis: ``.keras`` archives and legacy HDF5 files.

Both formats carry a JSON object-config tree. Loading instantiates every
object in it, so the tree itself is treated as code: module references must
stay inside the allowlist, Lambda layers must not reference blocklisted
gadgets, and serialized Lambda bytecode is pattern-checked.
"""

from __future__ import annotations

import base64
import binascii
import struct
from dataclasses import dataclass, field
from typing import Any, Iterator

from loadscan import _json
from loadscan.archive import ArchiveError, ArchiveInventory, read_entry, read_inventory
from loadscan.policy import Policy, fqn_matches
from loadscan.report import Analysis, AnalyzerError, Finding, make_finding

ANALYZER = "keras"
LEGACY_ANALYZER = "keras-legacy-h5"
MAX_CONFIG_DEPTH = 10_000
CONFIG_ENTRY = "config.json"
METADATA_ENTRY = "metadata.json"

# Bounds for the legacy HDF5 byte-pattern search.
_MAX_CANDIDATES = 16
_KEY_WINDOW = 512
_MAX_DOC_BYTES = 64 * 1024**2


class KerasParseError(AnalyzerError):
    pass


@dataclass(eq=False)
class KerasObjectNode:
    module: str | None
    class_name: str | None
    registered_name: str | None
    config: Any
    inbound_nodes: Any
    locator: str
    raw: dict
    depth: int = 1
    source: str = CONFIG_ENTRY
    # "lambda_function" for the function descriptor nested in a Lambda layer.
    role: str | None = None
    children: list[KerasObjectNode] = field(default_factory=list)

    @property
    def where(self) -> str:
        return f"{self.source}#{self.locator}"

    def fqn(self) -> str:
        return f"{self.module}.{self.class_name}"


@dataclass(frozen=True)
class LambdaSpec:
    kind: str  # "SerializedBytecode" | "FunctionReference"
    target_fqn: str | None
    payload: bytes | None
    arguments: Any
    locator: str
    module: str | None = None


@dataclass
class KerasArchive:
    root: KerasObjectNode
    declared_version: str | None
    inventory: ArchiveInventory
    document: Any


@dataclass
class ConfigWalk:
    nodes: list[KerasObjectNode]
    findings: list[Finding]


def _is_object(value: Any) -> bool:
    return isinstance(value, dict) and isinstance(value.get("class_name"), str)


def _text(value: Any) -> str | None:
    if value is None:
        return None
    return value if isinstance(value, str) else repr(value)


def _node(raw: dict, locator: str, depth: int, source: str, role: str | None) -> KerasObjectNode:
    module = raw.get("module")
    return KerasObjectNode(
        module=_text(module) if "module" in raw else None,
        class_name=raw.get("class_name"),
        registered_name=_text(raw.get("registered_name")),
        config=raw.get("config"),
        inbound_nodes=raw.get("inbound_nodes"),
        locator=locator,
        raw=raw,
        depth=depth,
        source=source,
        role=role,
    )


def build_tree(document: Any, source: str = CONFIG_ENTRY) -> KerasObjectNode:
    """Convert a parsed config document into a node tree (iteratively).

    Raises:
        KerasParseError: the document root is not a serialized object.
    """
    if not _is_object(document):
        raise KerasParseError(f"{source} root is not a serialized Keras object")
    root = _node(document, "", 1, source, None)
    stack: list[tuple[Any, str, KerasObjectNode]] = []

    def push_children(value: Any, ptr: str, owner: KerasObjectNode) -> None:
        items = value.items() if isinstance(value, dict) else enumerate(value)
        for key, child in reversed(list(items)):
            if isinstance(child, (dict, list)):
                stack.append((child, _json.child_pointer(ptr, key), owner))

    push_children(document, "", root)
    while stack:
        value, ptr, owner = stack.pop()
        if _is_object(value):
            role = None
            if owner.class_name == "Lambda" and ptr == owner.locator + "/config/function":
                role = "lambda_function"
            node = _node(value, ptr, owner.depth + 1, source, role)
            owner.children.append(node)
            owner = node
        push_children(value, ptr, owner)
    return root


def walk_config(root: KerasObjectNode, max_depth: int = MAX_CONFIG_DEPTH) -> ConfigWalk:
    """Depth-first, document-order walk; subtrees deeper than ``max_depth`` are cut."""
    nodes: list[KerasObjectNode] = []
    findings: list[Finding] = []
    stack = [root]
    while stack:
        node = stack.pop()
        if node.depth > max_depth:
            if not findings:
                findings.append(make_finding(
                    "KERAS-DEPTH-BOMB", f"object nesting exceeds {max_depth} levels; walk truncated",
                    node.where, node.class_name, ANALYZER))
            continue
        nodes.append(node)
        stack.extend(reversed(node.children))
    return ConfigWalk(nodes, findings)


def iter_nodes(root: KerasObjectNode) -> Iterator[KerasObjectNode]:
    yield from walk_config(root, max_depth=2**62).nodes


def rule_untrusted_module(node: KerasObjectNode, policy: Policy) -> Finding | None:
    """Flag objects whose ``module`` lies outside the Keras allowlist."""
    if node.module is None or fqn_matches(node.module, policy.keras_allowlist):
        return None
    fqn = node.fqn()
    return make_finding(
        "KERAS-UNTRUSTED-MODULE", f"object resolves to {fqn}, outside the module allowlist",
        node.where, f"module={node.module} class_name={node.class_name}", ANALYZER)


def _b64(text: Any) -> bytes:
    if isinstance(text, (list, tuple)) and text:
        text = text[0]
    if not isinstance(text, str):
        raise ValueError("bytecode is not a string")
    return base64.b64decode(text.encode("ascii"))


def extract_lambda(node: KerasObjectNode) -> LambdaSpec:
    """Classify a Lambda layer's function as a reference or serialized bytecode.

    Keras 3 writes ``function`` as an object: a string ``config`` names a
    function in ``module``, a mapping with ``code`` holds base64 marshal
    data. Keras 2 (legacy HDF5) uses ``function_type`` with a bare string or
    a ``[code, defaults, closure]`` list.

    Raises:
        ValueError: the function payload has none of the known encodings.
    """
    config = node.config if isinstance(node.config, dict) else {}
    function = config.get("function")
    arguments = config.get("arguments")
    ptr = node.locator + "/config/function"
    if isinstance(function, dict):
        fconf = function.get("config")
        if isinstance(fconf, str):
            module = _text(function.get("module")) or ""
            target = f"{module}.{fconf}" if module else fconf
            return LambdaSpec("FunctionReference", target, None, arguments, ptr, module)
        if isinstance(fconf, dict) and "code" in fconf:
            return LambdaSpec("SerializedBytecode", None, _b64(fconf["code"]), arguments, ptr)
        raise ValueError("function object has neither a name nor a code payload")
    function_type = config.get("function_type")
    if function_type == "lambda":
        return LambdaSpec("SerializedBytecode", None, _b64(function), arguments, ptr)
    if isinstance(function, str) and function_type in ("function", None):
        module = _text(config.get("module")) or ""
        target = f"{module}.{function}" if module else function
        return LambdaSpec("FunctionReference", target, None, arguments, ptr, module)
    raise ValueError("Lambda layer has no recognizable function")


def rule_lambda(node: KerasObjectNode, policy: Policy) -> list[Finding]:
    """Grade a Lambda layer from gadget reuse (Unsafe) down to a plain reference."""
    where = f"{node.source}#{node.locator}"
    try:
        spec = extract_lambda(node)
    except (ValueError, binascii.Error) as exc:
        return [make_finding("KERAS-LAMBDA-UNDECODABLE", f"Lambda function could not be decoded: {exc}",
                             where, _text(node.config), ANALYZER)]

    if spec.kind == "FunctionReference":
        findings = []
        target = spec.target_fqn or ""
        if fqn_matches(target, policy.gadget_blocklist):
            findings.append(make_finding(
                "KERAS-GADGET-REUSE", f"Lambda calls blocklisted internal {target}", where,
                f"function={target} arguments={_text(spec.arguments)}", ANALYZER))
        if not spec.module or not fqn_matches(spec.module, policy.keras_allowlist):
            findings.append(make_finding(
                "KERAS-UNTRUSTED-MODULE", f"Lambda references {target}, outside the module allowlist",
                where, f"function={target}", ANALYZER))
        if not findings:
            findings.append(make_finding(
                "KERAS-LAMBDA-REF", f"Lambda references {target}", where, f"function={target}", ANALYZER))
        return findings

    payload = spec.payload or b""
    lowered = payload.lower()
    hits = [p for p in policy.bytecode_patterns if p in lowered]
    if hits:
        i = lowered.find(hits[0])
        excerpt = payload[max(0, i - 16) : i + len(hits[0]) + 16]
        names = ", ".join(h.decode("latin-1") for h in hits)
        return [make_finding(
            "KERAS-LAMBDA-BYTECODE-DANGEROUS", f"Lambda bytecode contains dangerous identifiers: {names}",
            where, excerpt, ANALYZER)]
    return [make_finding(
        "KERAS-LAMBDA-BYTECODE", f"Lambda carries {len(payload)} bytes of serialized code",
        where, payload[:48], ANALYZER)]


def rule_custom_object(node: KerasObjectNode) -> Finding | None:
    # Registered custom objects serialize as "package>Name".
    if node.registered_name and ">" in node.registered_name:
        return make_finding(
            "KERAS-CUSTOM-OBJECT", f"config requires custom object {node.registered_name}",
            node.where, node.registered_name, ANALYZER)
    return None


def analyze_tree(root: KerasObjectNode, policy: Policy, max_depth: int = MAX_CONFIG_DEPTH) -> list[Finding]:
    walk = walk_config(root, max_depth)
    findings = list(walk.findings)
    for node in walk.nodes:
        if node.role != "lambda_function":
            hit = rule_untrusted_module(node, policy)
            if hit:
                findings.append(hit)
        if node.class_name == "Lambda":
            findings.extend(rule_lambda(node, policy))
        custom = rule_custom_object(node)
        if custom:
            findings.append(custom)
    return findings


def parse_keras_archive(data: bytes) -> KerasArchive:
    """Parse a ``.keras`` archive's config tree and metadata.

    Weight entries are inventoried but never decoded.

    Raises:
        KerasParseError: not a readable archive, or config.json absent or invalid.
    """
    try:
        inventory = read_inventory(data)
    except ArchiveError as exc:
        raise KerasParseError(str(exc)) from None
    entry = inventory.get(CONFIG_ENTRY)
    if entry is None:
        raise KerasParseError("config.json absent")
    try:
        document = _json.loads(read_entry(data, entry))
    except ArchiveError as exc:
        raise KerasParseError(f"config.json unreadable: {exc}") from None
    except ValueError as exc:
        raise KerasParseError(f"config.json is not valid JSON: {exc}") from None
    root = build_tree(document)

    version = None
    meta = inventory.get(METADATA_ENTRY)
    if meta is not None:
        try:
            metadata = _json.loads(read_entry(data, meta))
        except (ArchiveError, ValueError):
            metadata = None
        if isinstance(metadata, dict) and isinstance(metadata.get("keras_version"), str):
            version = metadata["keras_version"]
    return KerasArchive(root, version, inventory, document)


def scan_keras_archive(data: bytes, policy: Policy) -> Analysis:
    archive = parse_keras_archive(data)
    findings = analyze_tree(archive.root, policy)
    if "schema.json" in archive.inventory:
        findings.append(make_finding(
            "ARCHIVE-AMBIGUOUS-MARKERS", "archive also carries schema.json; Skops tooling may load it",
            "schema.json", None, ANALYZER))
    return Analysis(findings, True, (ANALYZER,))


# -- legacy HDF5 --------------------------------------------------------------


@dataclass
class _Candidate:
    offset: int
    end: int = 0
    document: Any = None
    error: str | None = None


def _decode_at(data: bytes, start: int, end: int | None = None) -> tuple[Any, int]:
    """Parse the JSON value at ``start``; return it and its end byte offset."""
    if end is not None:
        return _json.loads(data[start:end].rstrip(b"\x00")), end
    # latin-1 keeps character and byte offsets aligned for locating the end.
    text = data[start : min(len(data), start + _MAX_DOC_BYTES)].decode("latin-1")
    value, stop = _json.raw_decode(text)
    stop += start
    try:
        value = _json.loads(data[start:stop])
    except ValueError:
        pass
    return value, stop


def _global_heap_objects(data: bytes) -> Iterator[tuple[int, int]]:
    """Yield (offset, size) of objects in HDF5 global heap collections."""
    pos = data.find(b"GCOL")
    seen = 0
    while pos >= 0 and seen < _MAX_CANDIDATES * 4:
        seen += 1
        if pos + 16 <= len(data) and data[pos + 4] == 1:
            coll_size = struct.unpack_from("<Q", data, pos + 8)[0]
            end = min(len(data), pos + coll_size)
            obj = pos + 16
            while obj + 16 <= end:
                index, _refs, _res, size = struct.unpack_from("<HHIQ", data, obj)
                if index == 0 or obj + 16 + size > end:
                    break
                yield obj + 16, size
                obj += 16 + ((size + 7) & ~7)
        pos = data.find(b"GCOL", pos + 4)


def locate_model_configs(data: bytes) -> tuple[list[_Candidate], bool]:
    """Find embedded model_config documents by byte pattern.

    Tiers: a document right after a ``model_config`` key (fixed-length
    attribute), objects in global heap collections (variable-length
    attribute, what h5py writes for ``str``), then any ``{"class_name"``.
    Returns the candidates and whether a ``model_config`` key was seen.
    """
    found: dict[int, _Candidate] = {}
    key_seen = False

    def attempt(offset: int, end: int | None = None) -> None:
        if offset in found or len(found) >= _MAX_CANDIDATES * 3:
            return
        if any(c.offset < offset < c.end for c in found.values() if c.error is None):
            return
        cand = _Candidate(offset)
        try:
            cand.document, cand.end = _decode_at(data, offset, end)
        except ValueError as exc:
            cand.error = str(exc)
        found[offset] = cand

    pos = data.find(b"model_config")
    hits = 0
    while pos >= 0 and hits < _MAX_CANDIDATES:
        key_seen = True
        hits += 1
        brace = data.find(b"{", pos, pos + _KEY_WINDOW)
        if brace >= 0:
            attempt(brace)
        pos = data.find(b"model_config", pos + 1)

    for offset, size in _global_heap_objects(data):
        if data[offset : offset + 1] == b"{":
            attempt(offset, offset + size)

    pos = data.find(b'{"class_name"')
    hits = 0
    while pos >= 0 and hits < _MAX_CANDIDATES:
        hits += 1
        attempt(pos)
        pos = data.find(b'{"class_name"', pos + 1)

    return sorted(found.values(), key=lambda c: c.offset), key_seen


def scan_legacy_h5(data: bytes, policy: Policy) -> Analysis:
    """Analyze a legacy HDF5 model via its embedded model_config document."""
    findings = [make_finding(
        "KERAS-LEGACY-FORMAT", "legacy HDF5 model; safe_mode historically not enforced for this format",
        "/", data[:8], LEGACY_ANALYZER)]
    candidates, key_seen = locate_model_configs(data)
    models = [c for c in candidates if _is_object(c.document)]
    if not models:
        failures = [c for c in candidates if c.error is not None]
        if key_seen and failures:
            first = failures[0]
            findings.append(make_finding(
                "KERAS-LEGACY-UNPARSEABLE", f"model_config could not be parsed: {first.error}",
                f"model_config@{first.offset}", data[first.offset : first.offset + 64], LEGACY_ANALYZER))
            return Analysis(findings, True, (LEGACY_ANALYZER,))
        return Analysis(findings, False, (LEGACY_ANALYZER,))
    for cand in models:
        root = build_tree(cand.document, source=f"model_config@{cand.offset}")
        findings.extend(analyze_tree(root, policy))
    return Analysis(findings, True, (LEGACY_ANALYZER, ANALYZER))
