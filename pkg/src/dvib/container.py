"""Little-endian named-array container shared by dataset and checkpoint files.

Layout: 4-byte magic, u32 version, optional fixed-size header bytes, u32 array
count, then per array: u32 name length, UTF-8 name, 1-byte dtype tag, u32 ndim,
ndim x u64 shape, row-major payload.
"""

from __future__ import annotations

import struct

import numpy as np

DTYPES = {b"f": np.dtype("<f8"), b"i": np.dtype("<i8"), b"u": np.dtype("u1")}
TAGS = {v: k for k, v in DTYPES.items()}


class ContainerError(ValueError):
    """Base class for unreadable container files."""


class BadMagicError(ContainerError):
    pass


class VersionMismatchError(ContainerError):
    pass


class CorruptPayloadError(ContainerError):
    pass


def _tag(a: np.ndarray) -> tuple[bytes, np.ndarray]:
    if a.dtype.kind == "f":
        return b"f", a.astype("<f8")
    if a.dtype.kind in "iub" and a.dtype != np.uint8:
        return b"i", a.astype("<i8")
    if a.dtype == np.uint8:
        return b"u", a
    raise TypeError(f"unsupported dtype {a.dtype}")


def encode(magic: bytes, version: int, arrays: dict, header: bytes = b"") -> bytes:
    parts = [magic, struct.pack("<I", version), header, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        tag, a = _tag(np.asarray(arr))
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw + tag + struct.pack("<I", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}Q", *a.shape))
        parts.append(np.ascontiguousarray(a).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptPayloadError(f"file truncated: wanted {n} bytes at offset {self.pos}, have {len(self.buf) - self.pos}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def decode(buf: bytes, magic: bytes, version: int, header_size: int = 0) -> tuple[bytes, dict]:
    """Returns ``(header, arrays)``."""
    r = _Reader(buf)
    if len(buf) < 4 or buf[:4] != magic:
        raise BadMagicError(f"expected magic {magic!r}, found {buf[:4]!r}")
    r.take(4)
    found = r.u32()
    if found != version:
        raise VersionMismatchError(f"file version {found}, this reader supports {version}")
    header = r.take(header_size)
    arrays = {}
    for _ in range(r.u32()):
        try:
            name = r.take(r.u32()).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptPayloadError("array name is not valid UTF-8") from exc
        tag = r.take(1)
        if tag not in DTYPES:
            raise CorruptPayloadError(f"unknown dtype tag {tag!r} for array {name!r}")
        ndim = r.u32()
        if ndim > 8:
            raise CorruptPayloadError(f"implausible rank {ndim} for array {name!r}")
        shape = struct.unpack(f"<{ndim}Q", r.take(8 * ndim))
        dtype = DTYPES[tag]
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        arrays[name] = np.frombuffer(r.take(count * dtype.itemsize), dtype=dtype).reshape(shape).copy()
    if r.pos != len(buf):
        raise CorruptPayloadError(f"{len(buf) - r.pos} trailing bytes after last array")
    return header, arrays
