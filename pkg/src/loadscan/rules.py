"""Severity lattice, verdict labels and the threat-rule catalog."""

from __future__ import annotations

import enum
from dataclasses import dataclass


class Severity(enum.IntEnum):
    INFO = 0
    SUSPICIOUS = 1
    UNSAFE = 2

    def __str__(self) -> str:
        return self.name.capitalize()

    @classmethod
    def parse(cls, text: str) -> Severity:
        return cls[text.upper()]


class Label(str, enum.Enum):
    CLEAN = "Clean"
    SUSPICIOUS = "Suspicious"
    UNSAFE = "Unsafe"
    UNSUPPORTED = "Unsupported"
    ERROR = "Error"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class Rule:
    rule_id: str
    severity: Severity
    title: str
    references: tuple[str, ...] = ()


_U, _S, _I = Severity.UNSAFE, Severity.SUSPICIOUS, Severity.INFO

CATALOG: dict[str, Rule] = {
    r.rule_id: r
    for r in [
        # Keras (.keras archives and legacy HDF5)
        Rule("KERAS-UNTRUSTED-MODULE", _U, "object config imports a module outside the Keras allowlist",
             ("CVE-2025-1550", "PAIT-KERAS-301")),
        Rule("KERAS-GADGET-REUSE", _U, "Lambda layer references a blocklisted Keras internal (gadget reuse)",
             ("CVE-2025-8747", "CVE-2025-9906")),
        Rule("KERAS-LAMBDA-BYTECODE-DANGEROUS", _U, "Lambda bytecode names a process, shell or eval primitive",
             ("CVE-2025-9905", "CVE-2024-3660", "PAIT-KERAS-100")),
        Rule("KERAS-LAMBDA-BYTECODE", _S, "Lambda layer carries serialized bytecode",
             ("PAIT-KERAS-100",)),
        Rule("KERAS-LAMBDA-REF", _S, "Lambda layer references an allowlisted function",
             ("PAIT-KERAS-100",)),
        Rule("KERAS-LAMBDA-UNDECODABLE", _S, "Lambda function payload could not be decoded"),
        Rule("KERAS-CUSTOM-OBJECT", _S, "config references a registered custom object"),
        Rule("KERAS-DEPTH-BOMB", _S, "object config nesting exceeds the walk depth cap"),
        Rule("KERAS-LEGACY-FORMAT", _I, "legacy HDF5 model; safe_mode historically not enforced",
             ("CVE-2025-9905",)),
        Rule("KERAS-LEGACY-UNPARSEABLE", _S, "embedded model_config could not be parsed"),
        Rule("ARCHIVE-AMBIGUOUS-MARKERS", _S, "archive carries both config.json and schema.json"),
        # Skops
        Rule("SKOPS-ATTR-TRAVERSAL", _U, "MethodNode accesses a dangerous dunder attribute",
             ("CVE-2025-54413",)),
        Rule("SKOPS-TYPE-MISMATCH", _U, "MethodNode declared type differs from its object's declared type",
             ("CVE-2025-54413",)),
        Rule("SKOPS-DEEP-CHAIN", _S, "chained MethodNodes traverse the object graph",
             ("CVE-2025-54413",)),
        Rule("SKOPS-DUNDER-ATTR", _S, "MethodNode accesses a double-underscore attribute"),
        Rule("SKOPS-MALFORMED-NODE", _S, "schema node is missing required fields"),
        Rule("SKOPS-OPERATOR-SPOOF", _U, "OperatorFuncNode module is not 'operator'",
             ("CVE-2025-54412",)),
        Rule("SKOPS-OPERATOR-DANGEROUS", _U, "OperatorFuncNode invokes a call/attribute primitive",
             ("CVE-2025-54412",)),
        Rule("SKOPS-OPERATOR-FUNC", _I, "OperatorFuncNode invokes an operator function"),
        Rule("SKOPS-UNKNOWN-LOADER", _S, "schema node uses an unrecognized loader"),
        Rule("SKOPS-DANGEROUS-REFERENCE", _U, "schema node references a dangerous callable"),
        Rule("SKOPS-UNTRUSTED-TYPES", _I, "types that require explicit trust at load time"),
        Rule("SKOPS-JOBLIB-FALLBACK", _U, ".skops-named file is not a ZIP; loaders fall back to joblib/pickle",
             ("CVE-2025-54886",)),
        # Pickle
        Rule("PICKLE-DANGEROUS-IMPORT", _U, "pickle imports a dangerous callable"),
        Rule("PICKLE-DANGEROUS-REDUCE", _U, "pickle calls a dangerous callable"),
        Rule("PICKLE-UNKNOWN-IMPORT", _S, "pickle imports a callable outside the allowlist"),
        Rule("PICKLE-DYNAMIC-GLOBAL", _S, "STACK_GLOBAL operands are computed at load time"),
        Rule("PICKLE-EXTENSION-CODE", _S, "pickle resolves a callable through the extension registry"),
        Rule("PICKLE-MALFORMED", _S, "pickle stream contains an invalid opcode or argument"),
        Rule("PICKLE-TRUNCATED", _S, "pickle stream ends before STOP"),
        Rule("PICKLE-BAD-FRAME", _I, "FRAME length exceeds the remaining stream"),
        Rule("PICKLE-TRAILING-DATA", _I, "bytes follow the pickle STOP opcode"),
        # Scanner
        Rule("SCAN-UNSUPPORTED-FORMAT", _I, "no analyzer supports this format"),
        Rule("SCAN-ERROR", _I, "analyzer failed; see message"),
    ]
}


def severity_of(rule_id: str) -> Severity:
    return CATALOG[rule_id].severity
