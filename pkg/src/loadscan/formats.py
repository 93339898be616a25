"""Content-derived artifact identity."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass


class Kind(str, enum.Enum):
    KERAS_V3_ARCHIVE = "KerasV3Archive"
    SKOPS_ARCHIVE = "SkopsArchive"
    UNKNOWN_ZIP = "UnknownZip"
    HDF5 = "Hdf5"
    PICKLE = "Pickle"
    JSON_DOCUMENT = "JsonDocument"
    PROTOBUF_LIKE = "ProtobufLike"
    UNKNOWN = "Unknown"


ZIP_KINDS = frozenset({Kind.KERAS_V3_ARCHIVE, Kind.SKOPS_ARCHIVE, Kind.UNKNOWN_ZIP})

_PICKLE_RE = re.compile(r"Pickle\(protocol=([0-5])\)")


@dataclass(frozen=True)
class FormatKind:
    kind: Kind
    protocol: int | None = None

    def __post_init__(self) -> None:
        if self.kind is Kind.PICKLE:
            if self.protocol is None or not 0 <= self.protocol <= 5:
                raise ValueError(f"pickle protocol out of range: {self.protocol}")
        elif self.protocol is not None:
            raise ValueError("protocol only applies to Pickle")

    @property
    def is_zip(self) -> bool:
        return self.kind in ZIP_KINDS

    def __str__(self) -> str:
        if self.kind is Kind.PICKLE:
            return f"Pickle(protocol={self.protocol})"
        return self.kind.value

    @classmethod
    def parse(cls, text: str) -> FormatKind:
        m = _PICKLE_RE.fullmatch(text)
        if m:
            return cls(Kind.PICKLE, int(m.group(1)))
        return cls(Kind(text))


KERAS_V3 = FormatKind(Kind.KERAS_V3_ARCHIVE)
SKOPS = FormatKind(Kind.SKOPS_ARCHIVE)
UNKNOWN_ZIP = FormatKind(Kind.UNKNOWN_ZIP)
HDF5 = FormatKind(Kind.HDF5)
JSON_DOCUMENT = FormatKind(Kind.JSON_DOCUMENT)
PROTOBUF_LIKE = FormatKind(Kind.PROTOBUF_LIKE)
UNKNOWN = FormatKind(Kind.UNKNOWN)


def pickle_format(protocol: int) -> FormatKind:
    return FormatKind(Kind.PICKLE, protocol)
