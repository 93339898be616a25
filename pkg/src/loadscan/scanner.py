"""Sniff, route and label files; the glue between analyzers and reports."""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from loadscan.archive import ArchiveError
from loadscan.formats import UNKNOWN, FormatKind, Kind
from loadscan.keras_analysis import scan_keras_archive, scan_legacy_h5
from loadscan.pickle_analysis import ANALYZER as PICKLE_ANALYZER
from loadscan.pickle_analysis import scan_pickle
from loadscan.policy import Policy
from loadscan.report import Analysis, AnalyzerError, ScanReport, aggregate, make_finding
from loadscan.rules import Label
from loadscan.skops_analysis import ANALYZER as SKOPS_ANALYZER
from loadscan.skops_analysis import is_skops_name, route_non_zip_skops, scan_skops_archive
from loadscan.sniffer import sniff

MAX_JOBS = 64
SCANNER = "scanner"


def default_jobs() -> int:
    return max(1, min(os.cpu_count() or 1, MAX_JOBS))


def route(format: FormatKind, logical_name: str, data: bytes, policy: Policy) -> Analysis:
    """Dispatch ``data`` to the analyzer for its sniffed format.

    The name only matters for one case: a ``.skops`` name on non-ZIP bytes,
    which Skops tooling would hand to joblib.

    Raises:
        AnalyzerError: the selected analyzer could not parse the file.
    """
    if is_skops_name(logical_name) and not format.is_zip:
        analyzers = (SKOPS_ANALYZER, PICKLE_ANALYZER) if format.kind is Kind.PICKLE else (SKOPS_ANALYZER,)
        return Analysis(route_non_zip_skops(format, logical_name, data, policy), True, analyzers)
    kind = format.kind
    if kind is Kind.KERAS_V3_ARCHIVE:
        return scan_keras_archive(data, policy)
    if kind is Kind.SKOPS_ARCHIVE:
        return scan_skops_archive(data, policy)
    if kind is Kind.HDF5:
        return scan_legacy_h5(data, policy)
    if kind is Kind.PICKLE:
        return Analysis(scan_pickle(data, policy), True, (PICKLE_ANALYZER,))
    finding = make_finding("SCAN-UNSUPPORTED-FORMAT", f"no analyzer handles {format}", "/", data[:16], SCANNER)
    return Analysis([finding], False, ())


def scan_bytes(data: bytes, logical_name: str, policy: Policy) -> ScanReport:
    """Scan one in-memory artifact. Never raises."""
    start = time.perf_counter()
    format = sniff(data)
    error = False
    try:
        analysis = route(format, logical_name, data, policy)
    except (AnalyzerError, ArchiveError) as exc:
        analysis = Analysis([make_finding("SCAN-ERROR", str(exc), "/", None, SCANNER)], True, ())
        error = True
    except (RecursionError, MemoryError, ValueError, KeyError, IndexError, TypeError) as exc:
        analysis = Analysis([make_finding("SCAN-ERROR", f"internal error: {type(exc).__name__}: {exc}", "/",
                                          None, SCANNER)], True, ())
        error = True
    label = aggregate(analysis.findings, format, analysis.analyzed, error)
    return ScanReport(logical_name, format, tuple(analysis.findings), label, tuple(analysis.analyzers),
                      round(time.perf_counter() - start, 6))


def scan_path(path: Path | str, policy: Policy) -> ScanReport:
    """Read and scan one file; read failures produce an Error report."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        finding = make_finding("SCAN-ERROR", f"cannot read input: {exc.strerror or exc}", "/", None, SCANNER)
        return ScanReport(str(path), UNKNOWN, (finding,), Label.ERROR, ())
    report = scan_bytes(data, path.name, policy)
    return ScanReport(str(path), report.format, report.findings, report.label, report.analyzers,
                      report.duration_seconds)


def collect_inputs(paths: list[str | Path], recursive: bool = False,
                   follow_symlinks: bool = False) -> list[Path]:
    """Expand arguments into files, keeping argument order.

    Directories are walked (sorted) only with ``recursive``; otherwise they
    are passed through and later reported as unreadable. Inside a walk,
    symlinks are skipped unless ``follow_symlinks`` is set.
    """
    out: list[Path] = []
    for raw in paths:
        path = Path(raw)
        if not (recursive and path.is_dir()):
            out.append(path)
            continue
        for root, dirs, files in os.walk(path, followlinks=follow_symlinks):
            dirs.sort()
            if not follow_symlinks:
                dirs[:] = [d for d in dirs if not os.path.islink(os.path.join(root, d))]
            for name in sorted(files):
                full = Path(root) / name
                if follow_symlinks or not full.is_symlink():
                    out.append(full)
    return out


def scan_many(paths: list[Path], policy: Policy, jobs: int | None = None) -> list[ScanReport]:
    """Scan files concurrently; results come back in input order."""
    jobs = max(1, min(jobs or default_jobs(), MAX_JOBS))
    if jobs == 1 or len(paths) <= 1:
        return [scan_path(p, policy) for p in paths]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda p: scan_path(p, policy), paths))
