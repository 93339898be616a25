import io
import json
import pickle
import zipfile

import pytest

from loadscan.corpus import CorpusCase, ZipEntrySpec, gen_artifact, sv3_pickle, write_zip_stored
from loadscan.formats import FormatKind, Kind
from loadscan.sniffer import classify_archive, is_hdf5, looks_like_protobuf, sniff
from loadscan.archive import read_inventory, reader_for


@pytest.mark.parametrize("protocol", range(6))
def test_pickles_at_every_protocol(protocol):
    data = pickle.dumps({"a": [1, 2], "b": None}, protocol=protocol)
    fmt = sniff(data)
    assert fmt.kind is Kind.PICKLE
    if protocol >= 2:
        assert fmt.protocol == protocol
    else:
        assert fmt.protocol in (0, 1)


def test_sv3_bytes_are_pickle_protocol_4():
    assert sniff(sv3_pickle()) == FormatKind(Kind.PICKLE, 4)


@pytest.mark.parametrize("case,kind", [
    (CorpusCase.KV1, Kind.KERAS_V3_ARCHIVE),
    (CorpusCase.SV1, Kind.SKOPS_ARCHIVE),
    (CorpusCase.NO_LAMBDA_H5, Kind.HDF5),
    (CorpusCase.SKOPS_TEXT_FALLBACK, Kind.UNKNOWN),
])
def test_corpus_kinds(case, kind):
    assert sniff(gen_artifact(case)[1]).kind is kind


def test_keras_wins_when_both_markers_present():
    data = write_zip_stored([ZipEntrySpec("schema.json", b"{}"), ZipEntrySpec("config.json", b"{}")])
    assert sniff(data).kind is Kind.KERAS_V3_ARCHIVE


def test_unparseable_marker_is_not_enough():
    data = write_zip_stored([ZipEntrySpec("config.json", b"{not json")])
    assert sniff(data).kind is Kind.UNKNOWN_ZIP


def test_zip_without_markers_is_unknown_zip():
    assert sniff(write_zip_stored([ZipEntrySpec("weights.bin", b"\x00" * 8)])).kind is Kind.UNKNOWN_ZIP


def test_pytorch_style_zip_is_unknown_zip():
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        zf.writestr("archive/data.pkl", pickle.dumps([1], protocol=2))
        zf.writestr("archive/version", b"3\n")
    assert sniff(buf.getvalue()).kind is Kind.UNKNOWN_ZIP


def test_classify_archive_uses_inventory_and_reader():
    data = write_zip_stored([ZipEntrySpec("schema.json", b'{"__loader__": "ObjectNode"}')])
    inv = read_inventory(data)
    assert classify_archive(inv, reader_for(data, inv)).kind is Kind.SKOPS_ARCHIVE


def test_broken_zip_falls_through():
    data = b"PK\x03\x04" + b"garbage" * 3
    assert sniff(data).kind is not Kind.KERAS_V3_ARCHIVE


def test_hdf5_with_user_block():
    data = b"\x00" * 512 + b"\x89HDF\r\n\x1a\n" + b"\x00" * 64
    assert is_hdf5(data)
    assert sniff(data).kind is Kind.HDF5


def test_json_document():
    assert sniff(json.dumps({"a": [1, 2, 3]}).encode()).kind is Kind.JSON_DOCUMENT
    assert sniff(b"\xef\xbb\xbf[1, 2]").kind is Kind.JSON_DOCUMENT


def test_protobuf_like():
    # field 1 varint 150, field 2 length-delimited "testing", field 3 fixed32
    data = b"\x08\x96\x01\x12\x07testing\x1d\x00\x00\x80\x3f"
    assert looks_like_protobuf(data)
    assert sniff(data).kind is Kind.PROTOBUF_LIKE


@pytest.mark.parametrize("data", [b"", b"hello world\n", b"\x00" * 10, b"\xff\xfe\xfd"])
def test_unknown(data):
    assert sniff(data).kind is Kind.UNKNOWN


def test_deeply_nested_json_does_not_raise():
    assert sniff(b"[" * 200_000 + b"]" * 200_000).kind is Kind.JSON_DOCUMENT


def test_format_kind_round_trip():
    for fmt in (FormatKind(Kind.PICKLE, 3), FormatKind(Kind.HDF5), FormatKind(Kind.UNKNOWN_ZIP)):
        assert FormatKind.parse(str(fmt)) == fmt
    assert str(FormatKind(Kind.PICKLE, 4)) == "Pickle(protocol=4)"


def test_format_kind_rejects_bad_protocol():
    with pytest.raises(ValueError):
        FormatKind(Kind.PICKLE, 6)
    with pytest.raises(ValueError):
        FormatKind(Kind.HDF5, 2)
