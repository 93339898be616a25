"""Acceptance reporting: one PASS/FAIL line per criterion after the run."""

from __future__ import annotations

import pytest

CRITERIA = {
    1: "corpus confusion matrix via selftest, exact, under 5 s",
    2: "sniff and route outcomes are name-invariant except the .skops fallback",
    3: "scanning the corpus spawns nothing, writes only the report, opens no sockets",
    4: "pickle import extraction equals the reference unpickler on 50 streams",
    5: "untrusted-type enumeration on the MethodNode chain lists both concatenations",
    6: "fuzzing the four parsers yields no crashes or hangs (1 s per input)",
    7: "label aggregation is monotone, never Clean when unanalyzed, most-severe wins",
}

_by_node: dict[str, int] = {}
_outcomes: dict[int, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number this test checks")


def pytest_collection_modifyitems(items):
    for item in items:
        marker = item.get_closest_marker("criterion")
        if marker:
            _by_node[item.nodeid] = marker.args[0]


def pytest_runtest_logreport(report):
    n = _by_node.get(report.nodeid)
    if n is None:
        return
    if report.failed:
        _outcomes.setdefault(n, []).append("failed")
    elif report.when == "call" and report.passed:
        _outcomes.setdefault(n, []).append("passed")
    elif report.skipped:
        _outcomes.setdefault(n, []).append("skipped")


def pytest_terminal_summary(terminalreporter):
    if not _by_node:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in CRITERIA.items():
        results = _outcomes.get(n)
        if not results:
            status = "NOT RUN"
        elif "failed" in results:
            status = "FAIL"
        elif "skipped" in results:
            status = "SKIP"
        else:
            status = "PASS"
        terminalreporter.write_line(f"criterion {n}: {status}: {title}")
