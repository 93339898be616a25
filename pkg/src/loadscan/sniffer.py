"""Content-based format identification.

Filenames are never consulted: the same bytes always classify the same way,
which is what lets a pickle renamed to ``.skops`` or ``.json`` still be
recognized as a pickle.
"""

from __future__ import annotations

from typing import Callable

from loadscan import _json
from loadscan.archive import ArchiveError, ArchiveInventory, looks_like_zip, read_inventory, reader_for
from loadscan.formats import (
    HDF5,
    JSON_DOCUMENT,
    KERAS_V3,
    PROTOBUF_LIKE,
    SKOPS,
    UNKNOWN,
    UNKNOWN_ZIP,
    FormatKind,
    Kind,
    pickle_format,
)
from loadscan.pickle_analysis import probe

HDF5_MAGIC = b"\x89HDF\r\n\x1a\n"
# The superblock may sit at 0 or at any power of two from 512 (user block).
_HDF5_OFFSETS = (0, 512, 1024, 2048, 4096, 8192)
PROTOBUF_WINDOW = 256
KERAS_MARKER = "config.json"
SKOPS_MARKER = "schema.json"

__all__ = ["FormatKind", "Kind", "sniff", "classify_archive", "is_hdf5"]


def is_hdf5(data: bytes) -> bool:
    return any(data[off : off + 8] == HDF5_MAGIC for off in _HDF5_OFFSETS)


def _parses(reader: Callable[[str], bytes], name: str) -> bool:
    try:
        _json.loads(reader(name))
    except (ArchiveError, ValueError, KeyError):
        return False
    return True


def classify_archive(inventory: ArchiveInventory, entry_reader: Callable[[str], bytes]) -> FormatKind:
    """Decide which model archive a parsed ZIP inventory represents.

    A root ``config.json`` that parses makes it a Keras v3 archive, a root
    ``schema.json`` that parses makes it a Skops archive; Keras wins a tie.
    """
    if KERAS_MARKER in inventory and _parses(entry_reader, KERAS_MARKER):
        return KERAS_V3
    if SKOPS_MARKER in inventory and _parses(entry_reader, SKOPS_MARKER):
        return SKOPS
    return UNKNOWN_ZIP


def _read_varint(data: bytes, pos: int, end: int) -> tuple[int, int] | None:
    value = shift = 0
    while pos < end and shift < 64:
        b = data[pos]
        value |= (b & 0x7F) << shift
        pos += 1
        if not b & 0x80:
            return value, pos
        shift += 7
    return None


def looks_like_protobuf(data: bytes) -> bool:
    """Heuristic: the first bytes form a valid protobuf tag/wire-type sequence."""
    end = min(len(data), PROTOBUF_WINDOW)
    pos = fields = 0
    while pos < end:
        key = _read_varint(data, pos, end)
        if key is None:
            return False
        tag, pos = key
        field_no, wire = tag >> 3, tag & 7
        if field_no == 0 or wire not in (0, 1, 2, 5):
            return False
        if wire == 0:
            v = _read_varint(data, pos, end)
            if v is None:
                return pos >= end and fields >= 2
            pos = v[1]
        elif wire == 1:
            pos += 8
        elif wire == 5:
            pos += 4
        else:
            n = _read_varint(data, pos, end)
            if n is None:
                return False
            length, pos = n
            if pos + length > len(data):
                return False
            pos += length
        fields += 1
        if pos > len(data):
            return False
    return fields >= 2


def _json_document(data: bytes) -> bool:
    head = data[:64].lstrip(b"\xef\xbb\xbf \t\r\n")
    if not head[:1] in (b"{", b"["):
        return False
    try:
        _json.loads(data)
    except ValueError:
        return False
    return True


def sniff(data: bytes) -> FormatKind:
    """Classify ``data`` by content alone. Total: never raises."""
    try:
        return _sniff(data)
    except RecursionError:
        return UNKNOWN


def _sniff(data: bytes) -> FormatKind:
    if not data:
        return UNKNOWN
    if data[:8] == HDF5_MAGIC:
        return HDF5
    if looks_like_zip(data):
        try:
            inventory = read_inventory(data)
        except ArchiveError:
            pass
        else:
            return classify_archive(inventory, reader_for(data, inventory))
    if is_hdf5(data):
        return HDF5
    if data[0] == 0x80:
        protocol = probe(data)
        if protocol is not None:
            return pickle_format(protocol)
    if _json_document(data):
        return JSON_DOCUMENT
    protocol = probe(data)
    if protocol is not None:
        return pickle_format(protocol)
    if looks_like_protobuf(data):
        return PROTOBUF_LIKE
    return UNKNOWN
