import os
import pickle

import pytest

from loadscan.corpus import CorpusCase, ZipEntrySpec, gen_artifact, write_zip_stored
from loadscan.formats import HDF5, PROTOBUF_LIKE, FormatKind, Kind
from loadscan.policy import default_policy
from loadscan.rules import Label
from loadscan.scanner import MAX_JOBS, collect_inputs, default_jobs, route, scan_bytes, scan_many, scan_path

POLICY = default_policy()


def test_content_wins_over_name():
    data = pickle.dumps(os.system, protocol=2)
    analysis = route(FormatKind(Kind.PICKLE, 2), "model.json", data, POLICY)
    assert analysis.analyzed and analysis.analyzers == ("pickle",)
    assert "PICKLE-DANGEROUS-IMPORT" in {f.rule_id for f in analysis.findings}


def test_hdf5_goes_to_legacy_scan():
    analysis = route(HDF5, "model.h5", gen_artifact(CorpusCase.NO_LAMBDA_H5)[1], POLICY)
    assert "keras-legacy-h5" in analysis.analyzers


def test_protobuf_is_unsupported():
    analysis = route(PROTOBUF_LIKE, "saved_model.pb", b"\x08\x01\x10\x02", POLICY)
    assert not analysis.analyzed
    report = scan_bytes(b"\x08\x96\x01\x12\x07testing", "saved_model.pb", POLICY)
    assert report.label is Label.UNSUPPORTED


def test_unknown_zip_is_unsupported():
    report = scan_bytes(write_zip_stored([ZipEntrySpec("data.pkl", b"")]), "m.pt", POLICY)
    assert report.label is Label.UNSUPPORTED


def test_broken_keras_archive_is_error_not_clean():
    data = write_zip_stored([ZipEntrySpec("config.json", b'{"class_name": 1}')])
    # config.json parses so the sniffer says Keras, but it is not a model tree.
    report = scan_bytes(data, "m.keras", POLICY)
    assert report.label is Label.ERROR


def test_unreadable_file_is_error(tmp_path):
    report = scan_path(tmp_path / "missing.keras", POLICY)
    assert report.label is Label.ERROR
    assert report.findings[0].rule_id == "SCAN-ERROR"


def test_directory_without_recursion_is_error(tmp_path):
    assert scan_path(tmp_path, POLICY).label is Label.ERROR


def test_collect_inputs_recursive_sorted_no_symlinks(tmp_path):
    (tmp_path / "b").mkdir()
    (tmp_path / "b" / "z.bin").write_bytes(b"")
    (tmp_path / "a.bin").write_bytes(b"")
    outside = tmp_path.parent / f"{tmp_path.name}-outside"
    outside.mkdir()
    (outside / "secret.bin").write_bytes(b"")
    os.symlink(outside, tmp_path / "link_dir")
    os.symlink(outside / "secret.bin", tmp_path / "link_file")
    names = [p.relative_to(tmp_path).as_posix() for p in collect_inputs([tmp_path], recursive=True)]
    assert names == ["a.bin", "b/z.bin"]
    followed = [p.name for p in collect_inputs([tmp_path], recursive=True, follow_symlinks=True)]
    assert "secret.bin" in followed and "link_file" in followed


def test_order_preserved_for_any_jobs(tmp_path):
    paths = []
    for i, case in enumerate(list(CorpusCase) * 3):
        name, data = gen_artifact(case)
        path = tmp_path / f"{i:02d}-{name}"
        path.write_bytes(data)
        paths.append(path)
    expected = [str(p) for p in paths]
    for jobs in (1, 2, 7, MAX_JOBS):
        assert [r.input_name for r in scan_many(paths, POLICY, jobs)] == expected


def test_default_jobs_capped():
    assert 1 <= default_jobs() <= MAX_JOBS


@pytest.mark.parametrize("case", list(CorpusCase))
def test_scan_path_uses_file_name_for_routing(tmp_path, case):
    name, data = gen_artifact(case)
    path = tmp_path / name
    path.write_bytes(data)
    assert scan_path(path, POLICY).label is scan_bytes(data, name, POLICY).label
