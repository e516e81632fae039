"""PCEB embedding-table file format.

Layout (little-endian, no padding):

    magic   6 bytes  b"PCEB1\\x00"
    dim     u32
    count   u64
    then per record: u32 id-length, UTF-8 id bytes, dim float32 values

The format is shared with the pose toolkit byte-for-byte; this module is a
standalone implementation so the exporter carries no dependency on it.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

PCEB_MAGIC = b"PCEB1\x00"


class PcebFormatError(ValueError):
    """A structural violation, carrying the byte offset where it was found."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset


def write_pceb(path, records: list[tuple[str, np.ndarray]], dim: int) -> None:
    """Write records as a PCEB file, preserving order. Values are cast to
    little-endian float32; each vector must already have shape (dim,)."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(PCEB_MAGIC)
        fh.write(struct.pack("<I", dim))
        fh.write(struct.pack("<Q", len(records)))
        for record_id, vec in records:
            arr = np.asarray(vec, dtype="<f4")
            if arr.shape != (dim,):
                raise PcebFormatError(
                    f"embedding for {record_id!r} has shape {arr.shape}, "
                    f"expected ({dim},)")
            id_bytes = record_id.encode("utf-8")
            fh.write(struct.pack("<I", len(id_bytes)))
            fh.write(id_bytes)
            fh.write(arr.tobytes())


def read_pceb(path) -> tuple[int, list[tuple[str, np.ndarray]]]:
    """Read a PCEB file, returning (dim, ordered records). Raises
    PcebFormatError with a byte offset for any structural violation."""
    data = Path(path).read_bytes()

    def take(offset: int, n: int, what: str) -> bytes:
        if offset + n > len(data):
            raise PcebFormatError(
                f"unexpected EOF at offset {len(data)} while reading {what}",
                offset=len(data))
        return data[offset:offset + n]

    if take(0, len(PCEB_MAGIC), "magic") != PCEB_MAGIC:
        raise PcebFormatError(f"bad magic {data[:len(PCEB_MAGIC)]!r}", offset=0)
    off = len(PCEB_MAGIC)
    (dim,) = struct.unpack("<I", take(off, 4, "dim"))
    off += 4
    (count,) = struct.unpack("<Q", take(off, 8, "count"))
    off += 8

    records: list[tuple[str, np.ndarray]] = []
    seen: set[str] = set()
    vec_bytes = 4 * dim
    for i in range(count):
        (id_len,) = struct.unpack("<I", take(off, 4, f"record {i} id length"))
        off += 4
        record_id = take(off, id_len, f"record {i} id").decode("utf-8")
        off += id_len
        vec = np.frombuffer(
            take(off, vec_bytes, f"record {i} values"), dtype="<f4").copy()
        off += vec_bytes
        if record_id in seen:
            raise PcebFormatError(f"duplicate id {record_id!r} at record {i}",
                                  offset=off)
        seen.add(record_id)
        records.append((record_id, vec))
    if off != len(data):
        raise PcebFormatError(
            f"{len(data) - off} trailing bytes after {count} records",
            offset=off)
    return dim, records
