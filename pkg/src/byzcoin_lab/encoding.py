"""Canonical byte serialization primitives.

Fixed-width little-endian integers and length-prefixed byte strings.
Block hashing and signature messages build on these, so the layouts must
stay bit-exact; change nothing here without versioning the formats.
"""

from __future__ import annotations

import struct


def u8(value: int) -> bytes:
    return struct.pack("<B", value)


def u16(value: int) -> bytes:
    return struct.pack("<H", value)


def u32(value: int) -> bytes:
    return struct.pack("<I", value)


def u64(value: int) -> bytes:
    return struct.pack("<Q", value)


def i64(value: int) -> bytes:
    return struct.pack("<q", value)


def lp_bytes(data: bytes) -> bytes:
    """Length-prefixed byte string (u32 length, then the bytes)."""
    return u32(len(data)) + data


def lp_str(text: str) -> bytes:
    return lp_bytes(text.encode("utf-8"))


def bitvector(flags: list[bool]) -> bytes:
    """Pack booleans LSB-first into bytes, preceded by a u32 count."""
    out = bytearray(u32(len(flags)))
    byte = 0
    for i, flag in enumerate(flags):
        if flag:
            byte |= 1 << (i % 8)
        if i % 8 == 7:
            out.append(byte)
            byte = 0
    if len(flags) % 8:
        out.append(byte)
    return bytes(out)


class Reader:
    """Cursor over a byte string for decoding the formats above."""

    def __init__(self, data: bytes) -> None:
        self._data = data
        self._pos = 0

    def _take(self, count: int) -> bytes:
        if self._pos + count > len(self._data):
            raise ValueError("truncated record")
        chunk = self._data[self._pos : self._pos + count]
        self._pos += count
        return chunk

    def u8(self) -> int:
        return struct.unpack("<B", self._take(1))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self._take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self._take(8))[0]

    def i64(self) -> int:
        return struct.unpack("<q", self._take(8))[0]

    def lp_bytes(self) -> bytes:
        return self._take(self.u32())

    def lp_str(self) -> str:
        return self.lp_bytes().decode("utf-8")

    def raw(self, count: int) -> bytes:
        return self._take(count)

    def bitvector(self) -> list[bool]:
        count = self.u32()
        data = self._take((count + 7) // 8)
        return [bool(data[i // 8] >> (i % 8) & 1) for i in range(count)]

    def done(self) -> bool:
        return self._pos == len(self._data)
