"""Low-level helpers for the package's little-endian binary file formats."""

from __future__ import annotations

import hashlib
import os
import struct
import tempfile

import numpy as np

from .errors import ChecksumMismatchError, FileFormatError, TruncatedFileError

CHECKSUM_BYTES = 8


def checksum64(payload: bytes) -> bytes:
    """64-bit checksum of a payload (BLAKE2b truncated to 8 bytes)."""
    return hashlib.blake2b(payload, digest_size=CHECKSUM_BYTES).digest()


def append_checksum(payload: bytes) -> bytes:
    return payload + checksum64(payload)


def strip_checksum(data: bytes, what: str) -> bytes:
    """Verify and remove the trailing checksum; returns the bare payload."""
    if len(data) < CHECKSUM_BYTES:
        raise TruncatedFileError(f"{what}: file shorter than its checksum")
    payload, stored = data[:-CHECKSUM_BYTES], data[-CHECKSUM_BYTES:]
    if checksum64(payload) != stored:
        raise ChecksumMismatchError(f"{what}: checksum mismatch, file is corrupt")
    return payload


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    """Write a file atomically (temp file in the same directory, then rename)."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


class Writer:
    """Append-only little-endian byte builder."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def u16(self, value: int) -> None:
        self._buf += struct.pack("<H", value)

    def u32(self, value: int) -> None:
        self._buf += struct.pack("<I", value)

    def u64(self, value: int) -> None:
        self._buf += struct.pack("<Q", value)

    def raw(self, data: bytes) -> None:
        self._buf += data

    def f32_array(self, values: np.ndarray) -> None:
        self._buf += np.ascontiguousarray(values, dtype="<f4").tobytes()

    def getvalue(self) -> bytes:
        return bytes(self._buf)


class Reader:
    """Sequential little-endian reader that raises on overrun."""

    def __init__(self, data: bytes, what: str = "file") -> None:
        self._data = data
        self._pos = 0
        self._what = what

    def _take(self, n: int) -> bytes:
        end = self._pos + n
        if end > len(self._data):
            raise TruncatedFileError(f"{self._what}: unexpected end of file")
        chunk = self._data[self._pos:end]
        self._pos = end
        return chunk

    def u16(self) -> int:
        return struct.unpack("<H", self._take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self._take(8))[0]

    def raw(self, n: int) -> bytes:
        return self._take(n)

    def f32_array(self, count: int, shape: tuple[int, ...]) -> np.ndarray:
        data = self._take(4 * count)
        return np.frombuffer(data, dtype="<f4", count=count).reshape(shape).copy()

    def f64_array(self, count: int, shape: tuple[int, ...]) -> np.ndarray:
        data = self._take(8 * count)
        return np.frombuffer(data, dtype="<f8", count=count).reshape(shape).copy()

    def expect_end(self) -> None:
        if self._pos != len(self._data):
            raise FileFormatError(f"{self._what}: trailing bytes after payload")
