"""Canonical length-prefixed byte encoding.

Every digest in the system (certificate signatures, transaction ids,
response digests, block hashes, state hashes) is computed over this
layout, and the ledger file format reuses it. The rules are strict so
that two independent implementations of a structure always produce the
same bytes: fixed field order, big-endian u32 length prefixes for
variable-length fields, big-endian u64 for integers, u32 element counts
for sequences.
"""

from __future__ import annotations

import struct
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")


class DecodeError(ValueError):
    """Raised when bytes do not parse as the expected canonical layout."""


def enc_u32(n: int) -> bytes:
    if not 0 <= n <= 0xFFFFFFFF:
        raise ValueError(f"u32 out of range: {n}")
    return struct.pack(">I", n)


def enc_u64(n: int) -> bytes:
    if not 0 <= n <= 0xFFFFFFFFFFFFFFFF:
        raise ValueError(f"u64 out of range: {n}")
    return struct.pack(">Q", n)


def enc_bytes(b: bytes) -> bytes:
    return enc_u32(len(b)) + b


def enc_str(s: str) -> bytes:
    return enc_bytes(s.encode("utf-8"))


def enc_seq(items: Iterable[bytes]) -> bytes:
    """Encode a sequence of already-encoded elements with a count prefix."""
    chunks = list(items)
    return enc_u32(len(chunks)) + b"".join(chunks)


class ByteReader:
    """Sequential decoder for the layout produced by the enc_* helpers."""

    def __init__(self, data: bytes, offset: int = 0):
        self._data = data
        self._pos = offset

    def _take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise DecodeError("truncated input")
        out = self._data[self._pos : self._pos + n]
        self._pos += n
        return out

    def u32(self) -> int:
        return struct.unpack(">I", self._take(4))[0]

    def byte(self) -> int:
        return self._take(1)[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self._take(8))[0]

    def bytes_(self) -> bytes:
        return self._take(self.u32())

    def str_(self) -> str:
        try:
            return self.bytes_().decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError("invalid utf-8") from exc

    def seq(self, element: Callable[["ByteReader"], T]) -> list[T]:
        return [element(self) for _ in range(self.u32())]

    @property
    def exhausted(self) -> bool:
        return self._pos >= len(self._data)

    def expect_end(self) -> None:
        if not self.exhausted:
            raise DecodeError(f"{len(self._data) - self._pos} trailing bytes")
