import base64
import collections
import datetime
import json
import pickle
import pickletools
import struct
from pathlib import Path

import pytest

from loadscan.corpus import sv3_pickle
from loadscan.pickle_analysis import (
    DYNAMIC_MODULE,
    Origin,
    disassemble,
    extract_imports,
    probe,
    scan_pickle,
)
from loadscan.policy import default_policy

FIXTURES = json.loads((Path(__file__).parent / "fixtures" / "reference_pickles.json").read_text())


def _rules(data: bytes, policy=None) -> set[str]:
    return {f.rule_id for f in scan_pickle(data, policy or default_policy())}


def _reference_ops(data: bytes) -> list[tuple]:
    out = []
    for op, arg, pos in pickletools.genops(data):
        out.append((op.name, pos, arg))
    return out


def _our_ops(data: bytes) -> list[tuple]:
    out = []
    for op in disassemble(data).ops:
        arg = " ".join(op.arg) if op.name in ("GLOBAL", "INST") else op.arg
        out.append((op.name, op.offset, arg))
    return out


SAMPLE = [collections.OrderedDict(a=1), b"xy", "str", 3.5, 2**70, -1, datetime.date(2020, 1, 1),
          {1, 2}, frozenset({3}), None, True, (1,), (1, 2), (1, 2, 3), bytearray(b"z"), "☃" * 100]


@pytest.mark.parametrize("protocol", range(6))
def test_opcodes_match_genops(protocol):
    data = pickle.dumps(SAMPLE, protocol=protocol)
    assert _our_ops(data) == _reference_ops(data)


@pytest.mark.parametrize("row", FIXTURES, ids=[r["id"] for r in FIXTURES])
def test_fixture_streams_match_genops(row):
    data = base64.b64decode(row["b64"])
    assert _our_ops(data) == _reference_ops(data)


@pytest.mark.parametrize("row", FIXTURES, ids=[r["id"] for r in FIXTURES])
def test_fixture_import_order_matches_reference(row):
    refs = extract_imports(disassemble(base64.b64decode(row["b64"])))
    lookups = [[r.module, r.qualname] for r in refs if r.origin is not Origin.REDUCE_TARGET]
    assert lookups == row["imports"]


def test_sv3_stack_global_and_reduce():
    refs = extract_imports(disassemble(sv3_pickle()))
    assert [(r.module, r.qualname, r.origin) for r in refs] == [
        ("os", "system", Origin.STACK_GLOBAL),
        ("os", "system", Origin.REDUCE_TARGET),
    ]
    assert {"PICKLE-DANGEROUS-IMPORT", "PICKLE-DANGEROUS-REDUCE"} <= _rules(sv3_pickle())


def test_protocol0_global_reduce():
    data = b"cos\nsystem\n(S'ls'\ntR."
    refs = extract_imports(disassemble(data))
    assert refs[0].origin is Origin.GLOBAL and refs[0].fqn() == "os.system"
    assert "PICKLE-DANGEROUS-REDUCE" in _rules(data)


def test_python2_alias_is_normalized():
    assert "PICKLE-DANGEROUS-IMPORT" in _rules(b"cposix\nsystem\n(S'id'\ntR.")
    assert "PICKLE-DANGEROUS-IMPORT" in _rules(b"c__builtin__\neval\n(S'1'\ntR.")


def test_memoized_operands_resolve():
    # module and name strings are memoized and fetched back with BINGET.
    data = b"\x80\x04\x8c\x02os\x94\x8c\x06system\x94" + b"0" + b"h\x00h\x01\x93."
    refs = extract_imports(disassemble(data))
    assert refs[0].fqn() == "os.system"


def test_non_constant_stack_global_is_dynamic():
    # A STACK_GLOBAL whose module operand is the result of a call.
    data = b"\x80\x04" + b"\x8c\x08builtins\x8c\x03str\x93)R\x8c\x01x\x93."
    refs = extract_imports(disassemble(data))
    assert any(r.module == DYNAMIC_MODULE for r in refs)
    assert "PICKLE-DYNAMIC-GLOBAL" in _rules(data)


def test_inst_and_obj_count_as_calls():
    inst = b"(S'id'\nios\nsystem\n."
    assert {r.origin for r in extract_imports(disassemble(inst))} == {Origin.GLOBAL, Origin.REDUCE_TARGET}
    obj = b"\x80\x02(cos\nsystem\nS'id'\no."
    assert "PICKLE-DANGEROUS-REDUCE" in _rules(obj)


def test_newobj_target():
    data = pickle.dumps(collections.OrderedDict(), protocol=2)
    origins = [r.origin for r in extract_imports(disassemble(data))]
    assert Origin.REDUCE_TARGET in origins


def test_truncated_stream():
    data = sv3_pickle()[:-4]
    summary = disassemble(data)
    assert summary.truncated
    assert "PICKLE-TRUNCATED" in _rules(data)


def test_unknown_opcode_is_malformed():
    summary = disassemble(b"\x80\x04\xff.")
    assert summary.truncated
    assert any(a.rule_id == "PICKLE-MALFORMED" for a in summary.anomalies)


def test_trailing_bytes_reported():
    data = pickle.dumps(1, protocol=2) + b"extra"
    assert disassemble(data).trailing_bytes == 5
    assert "PICKLE-TRAILING-DATA" in _rules(data)


def test_oversized_frame_reported():
    data = b"\x80\x04\x95" + struct.pack("<Q", 10_000) + b"K\x01."
    assert "PICKLE-BAD-FRAME" in _rules(data)


def test_extension_registry_reported():
    assert "PICKLE-EXTENSION-CODE" in _rules(b"\x80\x02\x82\x01.")


def test_benign_pickle_has_no_findings():
    assert _rules(pickle.dumps({"a": [1, 2, 3]}, protocol=4)) == set()


def test_allowlist_flags_unknown_imports():
    policy = default_policy().with_changes(pickle_allowlist=("collections.OrderedDict",))
    data = pickle.dumps([collections.OrderedDict(), datetime.date(2020, 1, 1)], protocol=4)
    findings = scan_pickle(data, policy)
    assert [f.evidence for f in findings if f.rule_id == "PICKLE-UNKNOWN-IMPORT"] == ["datetime.date"]


def test_danger_prefix_is_segment_wise():
    policy = default_policy()
    assert "PICKLE-DANGEROUS-IMPORT" in _rules(b"csubprocess\nPopen\n.", policy)
    assert "PICKLE-DANGEROUS-IMPORT" not in _rules(b"csubprocessx\nPopen\n.", policy)


def test_probe():
    assert probe(pickle.dumps(1, protocol=5)) == 5
    assert probe(pickle.dumps([1], protocol=0)) in (0, 1)
    assert probe(b"\x80\x09.") is None
    assert probe(b"hello") is None
    assert probe(b"") is None


def test_huge_long_is_placeholder():
    raw = (1 << 4000).to_bytes(502, "little")
    data = b"\x80\x02\x8b" + struct.pack("<i", len(raw)) + raw + b"."
    [op, *_] = [o for o in disassemble(data).ops if o.name == "LONG4"]
    assert isinstance(op.arg, str)
