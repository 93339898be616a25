"""Findings, per-file reports, label aggregation and rendering."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Iterable

from loadscan import __version__
from loadscan.formats import FormatKind
from loadscan.rules import CATALOG, Label, Severity

EVIDENCE_LIMIT = 256


def sanitize_evidence(raw: bytes | str | None, limit: int = EVIDENCE_LIMIT) -> str:
    """Printable, length-capped rendering of an artifact excerpt.

    Non-printable bytes become ``\\xNN`` escapes so reports are safe to
    print in terminals and CI logs.
    """
    if raw is None:
        return ""
    data = raw.encode("utf-8", "surrogatepass") if isinstance(raw, str) else bytes(raw)
    out: list[str] = []
    used = 0
    for b in data:
        if b == 0x5C:
            piece = "\\\\"
        elif 0x20 <= b < 0x7F:
            piece = chr(b)
        else:
            piece = f"\\x{b:02x}"
        if used + len(piece) > limit - 3:
            out.append("...")
            break
        out.append(piece)
        used += len(piece)
    return "".join(out)


@dataclass(frozen=True)
class Finding:
    rule_id: str
    severity: Severity
    message: str
    locator: str
    evidence: str
    analyzer: str

    def sort_key(self) -> tuple[str, str, str, str]:
        return (self.locator, self.rule_id, self.message, self.evidence)

    def to_dict(self) -> dict:
        return {
            "rule_id": self.rule_id,
            "severity": str(self.severity),
            "message": self.message,
            "locator": self.locator,
            "evidence": self.evidence,
            "analyzer": self.analyzer,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Finding:
        return cls(d["rule_id"], Severity.parse(d["severity"]), d["message"], d["locator"],
                   d["evidence"], d["analyzer"])


def make_finding(rule_id: str, message: str, locator: str, evidence: bytes | str | None,
                 analyzer: str) -> Finding:
    """Create a finding; severity comes from the rule catalog."""
    rule = CATALOG[rule_id]
    return Finding(rule_id, rule.severity, message, locator, sanitize_evidence(evidence), analyzer)


def canonical(findings: Iterable[Finding]) -> list[Finding]:
    return sorted(findings, key=Finding.sort_key)


def aggregate(findings: Iterable[Finding], format: FormatKind | None = None, analyzed: bool = True,
              error: bool = False) -> Label:
    """Most severe verdict over ``findings``.

    Info findings never lift the label; an unanalyzed file is Unsupported and
    an analyzer failure is Error, so neither can come out Clean.
    """
    if error:
        return Label.ERROR
    if not analyzed:
        return Label.UNSUPPORTED
    worst = max((f.severity for f in findings), default=Severity.INFO)
    if worst is Severity.UNSAFE:
        return Label.UNSAFE
    if worst is Severity.SUSPICIOUS:
        return Label.SUSPICIOUS
    return Label.CLEAN


@dataclass(frozen=True)
class ScanReport:
    input_name: str
    format: FormatKind
    findings: tuple[Finding, ...]
    label: Label
    analyzers: tuple[str, ...] = ()
    duration_seconds: float = 0.0
    scanner_version: str = __version__

    def to_dict(self) -> dict:
        return {
            "input": self.input_name,
            "format": str(self.format),
            "label": self.label.value,
            "analyzers": list(self.analyzers),
            "findings": [f.to_dict() for f in canonical(self.findings)],
            "scanner_version": self.scanner_version,
            "duration_seconds": self.duration_seconds,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ScanReport:
        return cls(
            input_name=d["input"],
            format=FormatKind.parse(d["format"]),
            findings=tuple(Finding.from_dict(f) for f in d["findings"]),
            label=Label(d["label"]),
            analyzers=tuple(d["analyzers"]),
            duration_seconds=d["duration_seconds"],
            scanner_version=d["scanner_version"],
        )


class RenderMode(str, enum.Enum):
    HUMAN = "human"
    MACHINE = "machine"
    INTERCHANGE = "interchange"


def _human(report: ScanReport) -> str:
    lines = [
        f"{report.input_name}: {report.label.value.upper()}",
        f"  label: {report.label.value.lower()}",
        f"  format: {report.format}",
        f"  analyzed by: {', '.join(report.analyzers) if report.analyzers else 'none'}",
    ]
    findings = canonical(report.findings)
    if not findings:
        lines.append("  findings: none")
    else:
        lines.append(f"  findings ({len(findings)}):")
        for f in findings:
            lines.append(f"    [{f.severity}] {f.rule_id} at {f.locator or '/'}: {f.message}")
            if f.evidence:
                lines.append(f"        evidence: {f.evidence}")
    return "\n".join(lines) + "\n"


_SARIF_LEVEL = {Severity.UNSAFE: "error", Severity.SUSPICIOUS: "warning", Severity.INFO: "note"}
SARIF_SCHEMA = "https://json.schemastore.org/sarif-2.1.0.json"


def sarif_document(reports: list[ScanReport], include_info: bool = True) -> dict:
    """One SARIF 2.1.0 run covering ``reports``, one result per finding."""
    rules = [
        {
            "id": rule.rule_id,
            "shortDescription": {"text": rule.title},
            "defaultConfiguration": {"level": _SARIF_LEVEL[rule.severity]},
            "properties": {"severity": str(rule.severity), "references": list(rule.references)},
        }
        for rule in CATALOG.values()
    ]
    index = {rule_id: i for i, rule_id in enumerate(CATALOG)}
    results = []
    artifacts = []
    for i, report in enumerate(reports):
        artifacts.append({
            "location": {"uri": report.input_name},
            "properties": {"format": str(report.format), "label": report.label.value,
                           "analyzers": list(report.analyzers)},
        })
        for f in canonical(report.findings):
            if f.severity is Severity.INFO and not include_info:
                continue
            results.append({
                "ruleId": f.rule_id,
                "ruleIndex": index[f.rule_id],
                "level": _SARIF_LEVEL[f.severity],
                "message": {"text": f.message},
                "locations": [{
                    "physicalLocation": {"artifactLocation": {"uri": report.input_name, "index": i}},
                    "logicalLocations": [{"fullyQualifiedName": f.locator or "/", "kind": "object"}],
                }],
                "properties": {"severity": str(f.severity), "evidence": f.evidence,
                               "analyzer": f.analyzer},
            })
    return {
        "$schema": SARIF_SCHEMA,
        "version": "2.1.0",
        "runs": [{
            "tool": {"driver": {"name": "loadscan", "version": __version__, "rules": rules}},
            "artifacts": artifacts,
            "results": results,
        }],
    }


def _dump(obj: dict) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=True) + "\n").encode("ascii")


def render(report: ScanReport, mode: RenderMode | str, include_info: bool = True) -> bytes:
    """Render one report; identical reports render to identical bytes."""
    mode = RenderMode(mode)
    if mode is RenderMode.HUMAN:
        return _human(report).encode("utf-8")
    if mode is RenderMode.MACHINE:
        return _dump(report.to_dict())
    return _dump(sarif_document([report], include_info))


def render_batch(reports: list[ScanReport], mode: RenderMode | str, include_info: bool = True) -> bytes:
    """Render several reports as one document, preserving their order."""
    mode = RenderMode(mode)
    if mode is RenderMode.HUMAN:
        return "".join(_human(r) for r in reports).encode("utf-8")
    if mode is RenderMode.MACHINE:
        return _dump({"scanner_version": __version__, "reports": [r.to_dict() for r in reports]})
    return _dump(sarif_document(reports, include_info))


def parse_machine(data: bytes) -> ScanReport:
    return ScanReport.from_dict(json.loads(data))



class AnalyzerError(Exception):
    """An analyzer could not process a file it was routed; the label is Error."""


@dataclass
class Analysis:
    """What one routing pass produced for a file."""

    findings: list[Finding]
    analyzed: bool = True
    analyzers: tuple[str, ...] = ()
