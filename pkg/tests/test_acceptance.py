"""Acceptance criteria; ``conftest.py`` prints one PASS/FAIL line per criterion."""

from __future__ import annotations

import base64
import itertools
import json
import os
import random
import subprocess
import sys
import textwrap
import time
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from loadscan.cli import main, selftest_rows
from loadscan.corpus import MATRIX_CASES, SPECS, CorpusCase, gen_artifact, write_corpus
from loadscan.fuzz import mutate, seeds
from loadscan.pickle_analysis import disassemble, extract_imports
from loadscan.policy import default_policy
from loadscan.report import aggregate, make_finding
from loadscan.rules import CATALOG, Label, Severity
from loadscan.scanner import scan_bytes
from loadscan.skops_analysis import enumerate_untrusted, parse_skops_archive
from loadscan.sniffer import sniff

POLICY = default_policy()
FIXTURES = json.loads((Path(__file__).parent / "fixtures" / "reference_pickles.json").read_text())
RANK = {Label.CLEAN: 0, Label.SUSPICIOUS: 1, Label.UNSAFE: 2}


# 1 -----------------------------------------------------------------------------


EXPECTED_MATRIX = {
    "kv1": ("Unsafe", {"KERAS-UNTRUSTED-MODULE"}),
    "kv2": ("Unsafe", {"KERAS-GADGET-REUSE"}),
    "kv3": ("Unsafe", set()),
    "sv1": ("Unsafe", {"SKOPS-ATTR-TRAVERSAL", "SKOPS-TYPE-MISMATCH"}),
    "sv2": ("Unsafe", {"SKOPS-OPERATOR-SPOOF"}),
    "sv3": ("Unsafe", {"SKOPS-JOBLIB-FALLBACK", "PICKLE-DANGEROUS-IMPORT"}),
    "benign_lambda_keras": ("Suspicious", set()),
    "benign_lambda_h5": ("Suspicious", set()),
    "malicious_lambda_keras": ("Unsafe", set()),
    "no_lambda_keras": ("Clean", set()),
    "no_lambda_h5": ("Clean", {"KERAS-LEGACY-FORMAT"}),
}


@pytest.mark.criterion(1)
def test_selftest_matrix_exact_and_fast():
    start = time.perf_counter()
    rows = selftest_rows(POLICY)
    elapsed = time.perf_counter() - start
    assert elapsed < 5.0
    assert [r[0] for r in rows] == list(EXPECTED_MATRIX)
    for case, expected, actual, ok, missing in rows:
        assert ok, (case, actual, missing)
        assert actual == EXPECTED_MATRIX[case][0]
    for case in MATRIX_CASES:
        name, data = gen_artifact(case)
        rules = {f.rule_id for f in scan_bytes(data, name, POLICY).findings}
        assert EXPECTED_MATRIX[case.value][1] <= rules


@pytest.mark.criterion(1)
def test_selftest_command_exit_zero(capsys):
    start = time.perf_counter()
    assert main(["selftest"]) == 0
    assert time.perf_counter() - start < 5.0
    assert sum(line.endswith(" ok") for line in capsys.readouterr().out.splitlines()) == 11


@pytest.mark.criterion(1)
def test_no_false_negatives_and_no_unsafe_benign():
    for case in MATRIX_CASES:
        name, data = gen_artifact(case)
        label = scan_bytes(data, name, POLICY).label
        if SPECS[case].expected_label is Label.UNSAFE:
            assert label is Label.UNSAFE
        else:
            assert label is not Label.UNSAFE


# 2 -----------------------------------------------------------------------------


NAMES = ["model.keras", "model.h5", "model.skops", "MODEL.SKOPS", "weights.pkl", "model.json", "saved_model.pb",
         "x.bin", "noext", "archive.zip", "model.pt", "a.skops.bak", "config.json", "model.joblib", "y.skops"]


def _outcome(data: bytes, name: str):
    report = scan_bytes(data, name, POLICY)
    return report.format, report.label, sorted((f.rule_id, f.locator, f.message) for f in report.findings)


@pytest.mark.criterion(2)
def test_extension_independence():
    rng = random.Random(1234)
    pool = [gen_artifact(c)[1] for c in CorpusCase] + seeds()
    pairings = 0
    violations = []
    for i in range(150):
        data = rng.choice(pool)
        if i % 3 == 2:
            data = mutate(rng, data, pool)
        neutral_fmt, neutral_label, neutral = _outcome(data, "input.bin")
        assert sniff(data) == neutral_fmt
        for name in rng.sample(NAMES, 4):
            pairings += 1
            fmt, label, rules = _outcome(data, name)
            if fmt != neutral_fmt:
                violations.append((name, "format"))
                continue
            is_skops = name.lower().endswith(".skops")
            if is_skops and not fmt.is_zip:
                # Documented joint rule: name and content together add the fallback finding.
                extra = [r for r in rules if r[0] == "SKOPS-JOBLIB-FALLBACK"]
                rest = [r for r in rules if r[0] != "SKOPS-JOBLIB-FALLBACK"]
                base = neutral if fmt.kind.value == "Pickle" else []
                if len(extra) != 1 or rest != base or label is not Label.UNSAFE:
                    violations.append((name, "fallback"))
            elif (label, rules) != (neutral_label, neutral):
                violations.append((name, "route"))
    assert pairings >= 100
    assert violations == []


# 3 -----------------------------------------------------------------------------


AUDIT_SCRIPT = textwrap.dedent("""
    import json, os, sys
    from loadscan.cli import main

    corpus, report, warm = sys.argv[1], sys.argv[2], sys.argv[3]
    # Warm-up pass so lazy imports happen before auditing starts.
    main(["scan", "--recursive", "--format", "machine", "--output", warm, corpus])
    main(["scan", "--recursive", "--format", "interchange", "--output", warm, corpus])
    main(["scan", "--recursive", "--output", warm, corpus])
    report = os.path.realpath(report)
    violations = []
    FORBIDDEN = ("subprocess.", "os.system", "os.exec", "os.spawn", "os.posix_spawn", "os.fork", "os.forkpty",
                 "socket.", "urllib.", "http.", "ftplib.", "smtplib.", "pickle.find_class", "marshal.load",
                 "exec", "compile", "ctypes.", "os.remove", "os.rename", "os.rmdir", "os.mkdir", "os.link",
                 "os.symlink", "os.truncate", "shutil.", "import")

    def hook(event, args):
        if event == "open":
            path, mode, flags = args
            writing = (isinstance(mode, str) and any(c in mode for c in "wax+")) or (
                isinstance(flags, int) and flags & (os.O_WRONLY | os.O_RDWR | os.O_CREAT | os.O_APPEND))
            if writing and not (isinstance(path, str) and os.path.realpath(path) == report):
                violations.append([event, repr(args)[:200]])
        elif any(event == f or (f.endswith(".") and event.startswith(f)) or
                 (f in ("exec", "compile", "import") and event == f) for f in FORBIDDEN):
            violations.append([event, repr(args)[:200]])

    sys.addaudithook(hook)
    codes = [main(["scan", "--recursive", "--jobs", "4", "--format", mode, "--output", report, corpus])
             for mode in ("machine", "interchange", "human")]
    sys.stderr.write(json.dumps({"violations": violations, "codes": codes}) + "\\n")
""")


@pytest.mark.criterion(3)
def test_no_execution_no_writes_no_network(tmp_path):
    corpus = tmp_path / "corpus"
    write_corpus(corpus)
    report = tmp_path / "out" / "report.txt"
    report.parent.mkdir()
    warm = tmp_path / "warm.txt"
    result = subprocess.run([sys.executable, "-c", AUDIT_SCRIPT, str(corpus), str(report), str(warm)],
                            capture_output=True, text=True, timeout=300)
    assert result.returncode == 0, result.stderr
    outcome = json.loads(result.stderr.strip().splitlines()[-1])
    assert outcome["violations"] == []
    assert outcome["codes"] == [1, 1, 1]
    assert report.read_text().count("label:") == len(CorpusCase) + 1  # manifest.json is Unsupported
    assert sorted(p.name for p in corpus.iterdir()) == sorted(
        [SPECS[c].filename for c in CorpusCase] + ["manifest.json"])


# 4 -----------------------------------------------------------------------------


@pytest.mark.criterion(4)
def test_pickle_oracle_equivalence():
    assert len(FIXTURES) == 50
    mismatches = []
    for row in FIXTURES:
        refs = extract_imports(disassemble(base64.b64decode(row["b64"])))
        ours = {(r.module, r.qualname) for r in refs}
        if ours != {tuple(x) for x in row["imports"]}:
            mismatches.append(row["id"])
    assert mismatches == []


# 5 -----------------------------------------------------------------------------


@pytest.mark.criterion(5)
def test_listing3_enumeration():
    root = parse_skops_archive(gen_artifact(CorpusCase.SV1)[1])
    names = [u.type_string for u in enumerate_untrusted(root, POLICY.skops_trusted)]
    assert "builtins.int.__builtins__" in names
    assert "builtins.int.decision_function" in names


# 6 -----------------------------------------------------------------------------


FUZZ_TARGETS = ("sniff", "disassemble", "parse_keras_archive", "parse_skops_archive")


@pytest.mark.criterion(6)
@pytest.mark.slow
def test_fuzz_robustness(tmp_path):
    seconds = float(os.environ.get("LOADSCAN_FUZZ_SECONDS", "600"))
    procs = {
        name: subprocess.Popen(
            [sys.executable, "-m", "loadscan.fuzz", "--target", name, "--seconds", str(seconds), "--seed", "7",
             "--timeout", "1", "--crash-dir", str(tmp_path / "crashes")],
            stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
        for name in FUZZ_TARGETS
    }
    results = {}
    for name, proc in procs.items():
        out, err = proc.communicate(timeout=seconds * 2 + 300)
        assert proc.returncode in (0, 1), err
        [results[name]] = json.loads(out)
    for name in FUZZ_TARGETS:
        r = results[name]
        print(f"fuzz {name}: {r['iterations']} inputs, {len(r['crashes'])} crashes, {len(r['hangs'])} hangs")
        assert r["iterations"] > 0
        assert r["crashes"] == [] and r["hangs"] == [], r


# 7 -----------------------------------------------------------------------------


severities = st.lists(st.sampled_from(list(Severity)), max_size=10)
_BY_SEVERITY = {s: next(r for r in CATALOG.values() if r.severity is s).rule_id for s in Severity}


def _findings(sevs):
    return [make_finding(_BY_SEVERITY[s], "", "", None, "law") for s in sevs]


@pytest.mark.criterion(7)
@given(severities, severities)
def test_aggregate_monotone(a, b):
    assert RANK[aggregate(_findings(a))] <= RANK[aggregate(_findings(a + b))]


@pytest.mark.criterion(7)
@given(severities, st.booleans())
def test_unanalyzed_never_clean(sevs, error):
    assert aggregate(_findings(sevs), analyzed=False, error=error) is not Label.CLEAN
    assert aggregate(_findings(sevs), analyzed=False) is Label.UNSUPPORTED


def _most_severe(findings) -> Label:
    worst = max((f.severity for f in findings), default=Severity.INFO)
    return {Severity.INFO: Label.CLEAN, Severity.SUSPICIOUS: Label.SUSPICIOUS, Severity.UNSAFE: Label.UNSAFE}[worst]


@pytest.mark.criterion(7)
def test_most_severe_on_all_corpus_subsets():
    checked = 0
    for case in CorpusCase:
        name, data = gen_artifact(case)
        findings = list(scan_bytes(data, name, POLICY).findings)
        assert len(findings) <= 12
        for k in range(len(findings) + 1):
            for subset in itertools.combinations(findings, k):
                assert aggregate(subset) is _most_severe(subset)
                checked += 1
    assert checked > len(CorpusCase)
