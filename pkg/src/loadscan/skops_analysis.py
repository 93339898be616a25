"""Skops model analysis.

A ``.skops`` file is a ZIP whose ``schema.json`` describes the object tree
to rebuild. Each loader-bearing node names a loader plus a declared
``__module__``/``__class__`` pair; those declarations are what users are
asked to trust, so the rules here look for places where the declaration and
what actually executes can diverge.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

from loadscan import _json
from loadscan.archive import ArchiveError, read_entry, read_inventory
from loadscan.formats import FormatKind, Kind
from loadscan.pickle_analysis import scan_pickle
from loadscan.policy import Policy, fqn_matches
from loadscan.report import Analysis, AnalyzerError, Finding, make_finding

ANALYZER = "skops"
SCHEMA_ENTRY = "schema.json"

KNOWN_LOADERS = frozenset({
    "BunchNode", "BytearrayNode", "BytesNode", "DictNode", "DtypeNode", "FunctionNode",
    "JsonNode", "ListNode", "LossNode", "MaskedArrayNode", "MethodNode", "NdArrayNode",
    "ObjectNode", "OperatorFuncNode", "PartialNode", "RandomGeneratorNode",
    "RandomStateNode", "ReduceNode", "SetNode", "SGDNode", "SliceNode",
    "SparseMatrixNode", "TreeNode", "TupleNode", "TypeNode",
})
DANGEROUS_OPERATORS = frozenset({"call", "attrgetter", "methodcaller", "getitem"})


class SkopsParseError(AnalyzerError):
    pass


@dataclass(eq=False)
class SkopsNode:
    loader: str | None
    class_name: str | None
    module: str | None
    content: Any
    node_id: int | None
    locator: str
    raw: dict
    named: dict[str, SkopsNode] = field(default_factory=dict)
    children: list[SkopsNode] = field(default_factory=list)
    parent: SkopsNode | None = field(default=None, repr=False)

    @property
    def loader_bearing(self) -> bool:
        return self.loader is not None

    @property
    def type_string(self) -> str:
        return f"{self.module}.{self.class_name}"

    @property
    def func(self) -> Any:
        return self.content.get("func") if isinstance(self.content, dict) else None

    @property
    def obj(self) -> SkopsNode | None:
        return self.named.get("obj")

    @property
    def where(self) -> str:
        return f"{SCHEMA_ENTRY}#{self.locator}"


@dataclass(frozen=True)
class UntrustedType:
    type_string: str
    origin_locator: str


def _str(value: Any) -> str | None:
    return value if isinstance(value, str) else None


def _make(raw: dict, locator: str, parent: SkopsNode | None) -> SkopsNode:
    node_id = raw.get("__id__")
    return SkopsNode(
        loader=_str(raw.get("__loader__")),
        class_name=_str(raw.get("__class__")),
        module=_str(raw.get("__module__")),
        content=raw.get("content"),
        node_id=node_id if isinstance(node_id, int) and not isinstance(node_id, bool) else None,
        locator=locator,
        raw=raw,
        parent=parent,
    )


def _is_node(value: Any) -> bool:
    return isinstance(value, dict) and "__loader__" in value


def build_tree(document: Any) -> SkopsNode:
    """Convert a parsed schema document into a node tree (iteratively).

    Raises:
        SkopsParseError: the document root is not a JSON object.
    """
    if not isinstance(document, dict):
        raise SkopsParseError("schema.json root is not an object")
    root = _make(document, "", None)
    stack: list[tuple[Any, str, SkopsNode]] = []

    def push(value: Any, ptr: str, owner: SkopsNode) -> None:
        items = value.items() if isinstance(value, dict) else enumerate(value)
        for key, child in reversed(list(items)):
            if isinstance(child, (dict, list)):
                stack.append((child, _json.child_pointer(ptr, key), owner))

    push(document, "", root)
    while stack:
        value, ptr, owner = stack.pop()
        if _is_node(value):
            node = _make(value, ptr, owner)
            owner.children.append(node)
            prefix = owner.locator + "/content/"
            if ptr.startswith(prefix) and "/" not in ptr[len(prefix):]:
                owner.named[ptr[len(prefix):]] = node
            owner = node
        push(value, ptr, owner)
    return root


def walk(root: SkopsNode) -> list[SkopsNode]:
    """All nodes in document order (root first)."""
    out: list[SkopsNode] = []
    stack = [root]
    while stack:
        node = stack.pop()
        out.append(node)
        stack.extend(reversed(node.children))
    return out


def parse_skops_archive(data: bytes) -> SkopsNode:
    """Parse ``schema.json`` from a ``.skops`` archive into a node tree.

    Raises:
        SkopsParseError: unreadable archive, or schema.json absent or invalid.
    """
    try:
        inventory = read_inventory(data)
    except ArchiveError as exc:
        raise SkopsParseError(str(exc)) from None
    entry = inventory.get(SCHEMA_ENTRY)
    if entry is None:
        raise SkopsParseError("schema.json absent")
    try:
        document = _json.loads(read_entry(data, entry))
    except ArchiveError as exc:
        raise SkopsParseError(f"schema.json unreadable: {exc}") from None
    except ValueError as exc:
        raise SkopsParseError(f"schema.json is not valid JSON: {exc}") from None
    return build_tree(document)


def enumerate_untrusted(root: SkopsNode, trusted: set[str] | frozenset[str]) -> list[UntrustedType]:
    """Type strings a user would have to trust, with MethodNode attribute access.

    Besides ``module.class`` for every loader-bearing node, each MethodNode
    contributes ``module.class.func`` so the accessed attribute is reviewed
    too. Document order, first occurrence kept.
    """
    out: list[UntrustedType] = []
    seen: set[str] = set()

    def emit(type_string: str, locator: str) -> None:
        if type_string not in trusted and type_string not in seen:
            seen.add(type_string)
            out.append(UntrustedType(type_string, locator))

    for node in walk(root):
        if not node.loader_bearing or node.module is None or node.class_name is None:
            continue
        emit(node.type_string, node.locator)
        if node.loader == "MethodNode" and isinstance(node.func, str):
            emit(f"{node.type_string}.{node.func}", node.locator)
    return out


def _chain_length(node: SkopsNode) -> int:
    length = 0
    cur: SkopsNode | None = node
    while cur is not None and cur.loader == "MethodNode":
        length += 1
        cur = cur.obj
    return length


def rule_methodnode(node: SkopsNode, policy: Policy) -> list[Finding]:
    """Attribute traversal, declared-type mismatch, and long MethodNode chains."""
    findings: list[Finding] = []
    func = node.func
    if not isinstance(func, str) or not func:
        return [make_finding("SKOPS-MALFORMED-NODE", "MethodNode has no func field", node.where,
                             f"{node.type_string}", ANALYZER)]
    if func in policy.dunder_danger:
        findings.append(make_finding(
            "SKOPS-ATTR-TRAVERSAL", f"MethodNode reads attribute {func}", node.where,
            f"{node.type_string}.{func}", ANALYZER))
    elif func.startswith("__") and func.endswith("__"):
        findings.append(make_finding(
            "SKOPS-DUNDER-ATTR", f"MethodNode reads attribute {func}", node.where,
            f"{node.type_string}.{func}", ANALYZER))

    obj = node.obj
    if obj is not None and obj.loader_bearing and (obj.module, obj.class_name) != (node.module, node.class_name):
        findings.append(make_finding(
            "SKOPS-TYPE-MISMATCH",
            f"MethodNode declares {node.type_string} but its object declares {obj.type_string}",
            node.where, f"declared={node.type_string} obj={obj.type_string}", ANALYZER))

    parent = node.parent
    is_head = not (parent is not None and parent.loader == "MethodNode" and parent.obj is node)
    if is_head:
        length = _chain_length(node)
        if length >= policy.chain_depth_threshold:
            findings.append(make_finding(
                "SKOPS-DEEP-CHAIN", f"chain of {length} MethodNodes", node.where,
                f"{node.type_string}.{func}", ANALYZER))
    return findings


def rule_operatorfunc(node: SkopsNode) -> list[Finding]:
    """The loader ignores ``__module__`` and calls ``operator.<__class__>``."""
    findings: list[Finding] = []
    name = node.class_name or ""
    evidence = f"__class__={node.class_name} __module__={node.module}"
    if node.module != "operator":
        findings.append(make_finding(
            "SKOPS-OPERATOR-SPOOF",
            f"declared {node.type_string} but operator.{name} is what gets invoked", node.where,
            evidence, ANALYZER))
    if name in DANGEROUS_OPERATORS:
        findings.append(make_finding(
            "SKOPS-OPERATOR-DANGEROUS", f"operator.{name} can invoke arbitrary callables", node.where,
            evidence, ANALYZER))
    elif node.module == "operator":
        findings.append(make_finding(
            "SKOPS-OPERATOR-FUNC", f"invokes operator.{name}", node.where, evidence, ANALYZER))
    return findings


def analyze_tree(root: SkopsNode, policy: Policy) -> list[Finding]:
    findings: list[Finding] = []
    for node in walk(root):
        if not node.loader_bearing:
            if node is not root or "__class__" in node.raw:
                findings.append(make_finding(
                    "SKOPS-MALFORMED-NODE", "node has no __loader__", node.where, None, ANALYZER))
            continue
        if node.class_name is None or node.module is None:
            findings.append(make_finding(
                "SKOPS-MALFORMED-NODE", "node lacks __class__ or __module__", node.where,
                f"__loader__={node.loader}", ANALYZER))
            continue
        if node.loader not in KNOWN_LOADERS:
            findings.append(make_finding(
                "SKOPS-UNKNOWN-LOADER", f"unrecognized loader {node.loader}", node.where,
                node.loader, ANALYZER))
        if node.loader == "MethodNode":
            findings.extend(rule_methodnode(node, policy))
        elif node.loader == "OperatorFuncNode":
            findings.extend(rule_operatorfunc(node))
        if node.loader != "OperatorFuncNode" and fqn_matches(node.type_string, policy.pickle_danger_list):
            findings.append(make_finding(
                "SKOPS-DANGEROUS-REFERENCE", f"node references {node.type_string}", node.where,
                node.type_string, ANALYZER))

    untrusted = enumerate_untrusted(root, policy.skops_trusted)
    if untrusted:
        names = ", ".join(u.type_string for u in untrusted)
        findings.append(make_finding(
            "SKOPS-UNTRUSTED-TYPES", f"{len(untrusted)} type(s) need explicit trust: {names}",
            SCHEMA_ENTRY, names, ANALYZER))
    return findings


def scan_skops_archive(data: bytes, policy: Policy) -> Analysis:
    return Analysis(analyze_tree(parse_skops_archive(data), policy), True, (ANALYZER,))


def is_skops_name(logical_name: str) -> bool:
    return logical_name.lower().endswith(".skops")


def route_non_zip_skops(format: FormatKind, logical_name: str, data: bytes = b"",
                        policy: Policy | None = None) -> list[Finding]:
    """Flag a ``.skops``-named file that is not a ZIP archive.

    Skops tooling hands such files to joblib (pickle) instead of the
    validating loader. When the bytes are a pickle, its own findings are
    merged in.
    """
    if not is_skops_name(logical_name) or format.is_zip:
        return []
    findings = [make_finding(
        "SKOPS-JOBLIB-FALLBACK",
        f"{logical_name} is {format}, not a ZIP archive; it would be loaded through joblib/pickle",
        "/", data[:32], ANALYZER)]
    if format.kind is Kind.PICKLE and policy is not None:
        findings.extend(scan_pickle(data, policy))
    return findings
