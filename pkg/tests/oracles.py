"""Independent reference implementations used as test oracles."""

from __future__ import annotations


def crc32_bitwise(data: bytes) -> int:
    """Reflected CRC-32 (polynomial 0xEDB88320), one bit at a time."""
    crc = 0xFFFFFFFF
    for byte in data:
        crc ^= byte
        for _ in range(8):
            crc = (crc >> 1) ^ (0xEDB88320 if crc & 1 else 0)
    return crc ^ 0xFFFFFFFF
