"""Command-line interface: scan, gen-corpus, selftest, rules."""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path
from typing import Sequence

from loadscan import __version__
from loadscan.corpus import MATRIX_CASES, SPECS, gen_artifact, write_corpus
from loadscan.policy import Policy, PolicyError, default_policy, load_policy
from loadscan.report import RenderMode, ScanReport, render_batch
from loadscan.rules import CATALOG, Label
from loadscan.scanner import MAX_JOBS, collect_inputs, default_jobs, scan_bytes, scan_many

POLICY_ENV = "LOADSCAN_POLICY"

EXIT_CLEAN = 0
EXIT_UNSAFE = 1
EXIT_SUSPICIOUS = 2
EXIT_UNSUPPORTED = 4
EXIT_ERROR = 5
EXIT_USAGE = 64

EPILOG = f"""\
exit codes (scan):
  0   every file Clean
  1   some file Unsafe (and none Error)
  2   some file Suspicious (none Unsafe or Error)
  4   some file Unsupported (nothing worse); 0 with --permit-unsupported
  5   some file Error (unreadable or unparseable)
  64  usage error, including an invalid policy file

The default policy file can be set with ${POLICY_ENV}.
Parallel jobs are capped at {MAX_JOBS}.
"""


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _jobs(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 1 <= value <= MAX_JOBS:
        raise argparse.ArgumentTypeError(f"must be between 1 and {MAX_JOBS}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="loadscan", description="Static scanner for model serialization formats.",
                     epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    scan = sub.add_parser("scan", help="scan files or directories", epilog=EPILOG,
                          formatter_class=argparse.RawDescriptionHelpFormatter)
    scan.add_argument("paths", nargs="+", metavar="PATH")
    scan.add_argument("--policy", metavar="FILE", help=f"policy YAML (default: ${POLICY_ENV} or built-in)")
    scan.add_argument("--format", choices=[m.value for m in RenderMode], default="human")
    scan.add_argument("--output", metavar="FILE", help="write the report here instead of stdout")
    scan.add_argument("--recursive", action="store_true", help="descend into directories")
    scan.add_argument("--follow-symlinks", action="store_true", help="follow symlinks while descending")
    scan.add_argument("--jobs", type=_jobs, default=None, help=f"parallel workers (default: CPU count, max {MAX_JOBS})")
    scan.add_argument("--permit-unsupported", action="store_true", help="exit 0 instead of 4 for Unsupported")
    scan.add_argument("--no-info", action="store_true", help="omit Info results from interchange output")

    gen = sub.add_parser("gen-corpus", help="write the synthetic corpus and manifest.json")
    gen.add_argument("outdir", metavar="OUTDIR")

    sub.add_parser("selftest", help="scan the corpus in memory and compare with expected labels")
    sub.add_parser("rules", help="list the rule catalog")
    return parser


def resolve_policy(path: str | None) -> Policy:
    path = path or os.environ.get(POLICY_ENV) or None
    if path is None:
        return default_policy()
    try:
        document = Path(path).read_bytes()
    except OSError as exc:
        raise UsageError(f"cannot read policy {path}: {exc.strerror or exc}") from None
    try:
        return load_policy(document)
    except PolicyError as exc:
        raise UsageError(f"invalid policy {path}: {exc}") from None


def exit_code(reports: Sequence[ScanReport], permit_unsupported: bool = False) -> int:
    labels = {r.label for r in reports}
    if Label.ERROR in labels:
        return EXIT_ERROR
    if Label.UNSAFE in labels:
        return EXIT_UNSAFE
    if Label.SUSPICIOUS in labels:
        return EXIT_SUSPICIOUS
    if Label.UNSUPPORTED in labels and not permit_unsupported:
        return EXIT_UNSUPPORTED
    return EXIT_CLEAN


def cmd_scan(args: argparse.Namespace) -> int:
    policy = resolve_policy(args.policy)
    inputs = collect_inputs(args.paths, args.recursive, args.follow_symlinks)
    reports = scan_many(inputs, policy, args.jobs or default_jobs())
    output = render_batch(reports, args.format, include_info=not args.no_info)
    if args.output:
        Path(args.output).write_bytes(output)
    else:
        sys.stdout.buffer.write(output)
        sys.stdout.flush()
    return exit_code(reports, args.permit_unsupported)


def selftest_rows(policy: Policy | None = None) -> list[tuple[str, str, str, bool, list[str]]]:
    """Scan each matrix case in memory: ``(case, expected, actual, ok, missing_rules)``."""
    policy = policy or default_policy()
    rows = []
    for case in MATRIX_CASES:
        spec = SPECS[case]
        name, data = gen_artifact(case)
        report = scan_bytes(data, name, policy)
        seen = {f.rule_id for f in report.findings}
        missing = [r for r in spec.required_rules if r not in seen]
        ok = report.label is spec.expected_label and not missing
        rows.append((case.value, spec.expected_label.value, report.label.value, ok, missing))
    return rows


def cmd_selftest(_: argparse.Namespace) -> int:
    start = time.perf_counter()
    rows = selftest_rows()
    width = max(len(r[0]) for r in rows)
    print(f"{'case':<{width}}  {'expected':<11} {'actual':<11} result")
    for case, expected, actual, ok, missing in rows:
        note = "" if not missing else f" (missing {', '.join(missing)})"
        print(f"{case:<{width}}  {expected:<11} {actual:<11} {'ok' if ok else 'MISMATCH'}{note}")
    passed = sum(r[3] for r in rows)
    print(f"{passed}/{len(rows)} cases match in {time.perf_counter() - start:.3f}s")
    return 0 if passed == len(rows) else 1


def cmd_gen_corpus(args: argparse.Namespace) -> int:
    path = write_corpus(args.outdir)
    print(f"wrote corpus manifest {path}")
    return 0


def cmd_rules(_: argparse.Namespace) -> int:
    for rule in CATALOG.values():
        refs = f"  [{', '.join(rule.references)}]" if rule.references else ""
        print(f"{rule.rule_id:<34} {str(rule.severity):<10} {rule.title}{refs}")
    return 0


COMMANDS = {"scan": cmd_scan, "selftest": cmd_selftest, "gen-corpus": cmd_gen_corpus, "rules": cmd_rules}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"loadscan: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
