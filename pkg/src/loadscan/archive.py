"""Minimal ZIP reader for model archives.

Only the subset of the PKWARE format that model files use is accepted:
single-disk archives, stored or deflated entries, no encryption, no ZIP64.
Every structural problem raises :class:`ArchiveError` carrying the byte
offset where parsing failed.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

LOCAL_MAGIC = b"PK\x03\x04"
CENTRAL_MAGIC = b"PK\x01\x02"
EOCD_MAGIC = b"PK\x05\x06"

MAX_ENTRIES = 65_535
MAX_ENTRY_SIZE = 4 * 1024**3
# Upper bound for entries we actually decompress (config/schema documents).
MAX_READ_SIZE = 64 * 1024**2

_EOCD = struct.Struct("<4s4H2LH")
_CENTRAL = struct.Struct("<4s6H3L5H2L")
_LOCAL = struct.Struct("<4s5H3L2H")

METHOD_STORED = 0
METHOD_DEFLATE = 8


class ArchiveError(ValueError):
    """Structural ZIP error at a known byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.message = message
        self.offset = offset


@dataclass(frozen=True)
class ZipEntry:
    name: str
    size: int
    crc32: int
    compressed_size: int = 0
    method: int = METHOD_STORED
    flags: int = 0
    header_offset: int = 0


@dataclass(frozen=True)
class ArchiveInventory:
    entries: list[ZipEntry] = field(default_factory=list)

    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    def get(self, name: str) -> ZipEntry | None:
        for entry in self.entries:
            if entry.name == name:
                return entry
        return None

    def __contains__(self, name: object) -> bool:
        return any(e.name == name for e in self.entries)


def looks_like_zip(data: bytes) -> bool:
    return data[:4] in (LOCAL_MAGIC, EOCD_MAGIC)


def _find_eocd(data: bytes) -> int:
    lo = max(0, len(data) - _EOCD.size - 0xFFFF)
    pos = data.rfind(EOCD_MAGIC, lo)
    while pos >= 0:
        if pos + _EOCD.size <= len(data):
            comment_len = struct.unpack_from("<H", data, pos + 20)[0]
            if pos + _EOCD.size + comment_len <= len(data):
                return pos
        pos = data.rfind(EOCD_MAGIC, lo, pos)
    raise ArchiveError("end of central directory record not found", max(0, len(data) - _EOCD.size))


def read_inventory(data: bytes) -> ArchiveInventory:
    """Parse and validate the central directory of a ZIP archive."""
    if not looks_like_zip(data):
        raise ArchiveError("missing ZIP local header signature", 0)
    if len(data) < _EOCD.size:
        raise ArchiveError("archive shorter than end record", 0)

    eocd = _find_eocd(data)
    (_, disk, cd_disk, n_disk, n_total, cd_size, cd_offset, _clen) = _EOCD.unpack_from(data, eocd)
    if disk != 0 or cd_disk != 0 or n_disk != n_total:
        raise ArchiveError("multi-disk archives are not supported", eocd)
    if n_total == 0xFFFF or cd_size == 0xFFFFFFFF or cd_offset == 0xFFFFFFFF:
        raise ArchiveError("ZIP64 archives are not supported", eocd)
    if n_total > MAX_ENTRIES:
        raise ArchiveError(f"too many entries ({n_total})", eocd)
    if cd_offset + cd_size > eocd:
        raise ArchiveError("central directory overlaps end record", eocd)

    entries: list[ZipEntry] = []
    seen: set[str] = set()
    pos = cd_offset
    cd_end = cd_offset + cd_size
    for _ in range(n_total):
        if pos + _CENTRAL.size > cd_end:
            raise ArchiveError("central directory truncated", pos)
        (magic, _made, _need, flags, method, _time, _date, crc, csize, usize,
         name_len, extra_len, comment_len, _disk, _iattr, _eattr, local_off) = _CENTRAL.unpack_from(data, pos)
        if magic != CENTRAL_MAGIC:
            raise ArchiveError("bad central directory entry signature", pos)
        name_start = pos + _CENTRAL.size
        next_pos = name_start + name_len + extra_len + comment_len
        if next_pos > cd_end:
            raise ArchiveError("central directory entry overruns directory", pos)
        if flags & 0x1:
            raise ArchiveError("encrypted entries are not supported", pos)
        if 0xFFFFFFFF in (csize, usize, local_off):
            raise ArchiveError("ZIP64 entries are not supported", pos)
        if usize > MAX_ENTRY_SIZE:
            raise ArchiveError(f"declared entry size {usize} exceeds limit", pos)
        if local_off >= cd_offset:
            raise ArchiveError("local header offset points past entry data", pos)
        raw_name = data[name_start : name_start + name_len]
        name = raw_name.decode("utf-8" if flags & 0x800 else "cp437", errors="replace")
        if name in seen:
            raise ArchiveError(f"duplicate entry name {name!r}", pos)
        seen.add(name)
        entries.append(ZipEntry(name, usize, crc, csize, method, flags, local_off))
        pos = next_pos
    if pos != cd_end:
        raise ArchiveError("central directory size does not match its entries", pos)
    return ArchiveInventory(entries)


def read_entry(data: bytes, entry: ZipEntry, max_size: int = MAX_READ_SIZE) -> bytes:
    """Return the decompressed bytes of ``entry``, verifying size and CRC."""
    off = entry.header_offset
    if off + _LOCAL.size > len(data):
        raise ArchiveError("local header truncated", off)
    magic, _need, _flags, _method, _t, _d, _crc, _cs, _us, name_len, extra_len = _LOCAL.unpack_from(data, off)
    if magic != LOCAL_MAGIC:
        raise ArchiveError("bad local header signature", off)
    start = off + _LOCAL.size + name_len + extra_len
    end = start + entry.compressed_size
    if end > len(data):
        raise ArchiveError("entry data truncated", start)
    if entry.size > max_size:
        raise ArchiveError(f"entry {entry.name!r} too large to read ({entry.size} bytes)", off)
    raw = data[start:end]
    if entry.method == METHOD_STORED:
        out = raw
    elif entry.method == METHOD_DEFLATE:
        inflater = zlib.decompressobj(-15)
        try:
            out = inflater.decompress(raw, entry.size + 1)
        except zlib.error as exc:
            raise ArchiveError(f"deflate error: {exc}", start) from None
    else:
        raise ArchiveError(f"unsupported compression method {entry.method}", off)
    if len(out) != entry.size:
        raise ArchiveError(f"entry {entry.name!r} size mismatch", start)
    if zlib.crc32(out) != entry.crc32:
        raise ArchiveError(f"entry {entry.name!r} CRC-32 mismatch", start)
    return out


def reader_for(data: bytes, inventory: ArchiveInventory):
    """Build a ``name -> bytes`` callback over ``data``."""

    def read(name: str) -> bytes:
        entry = inventory.get(name)
        if entry is None:
            raise KeyError(name)
        return read_entry(data, entry)

    return read
