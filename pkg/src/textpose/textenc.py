"""Caption embeddings: deterministic hashed bag-of-tokens encoder (desk scale)
and the PCEB binary table format for precomputed embeddings.

Both sources expose the same 768-dimensional interface, so the rest of the
toolkit never cares whether embeddings were hashed locally or exported by a
real pretrained encoder.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field

import numpy as np

EMBED_DIM = 768

PCEB_MAGIC = b"PCEB1\x00"

# 64-bit FNV-1a published constants.
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class EmbeddingError(ValueError):
    """Raised for empty captions or degenerate embeddings."""


class PcebError(ValueError):
    """Base error for malformed PCEB files."""


class PcebBadMagic(PcebError):
    pass


class PcebDimensionMismatch(PcebError):
    pass


class PcebTruncated(PcebError):
    pass


class PcebDuplicateId(PcebError):
    pass


def fnv1a_64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def tokenize(caption: str) -> list[str]:
    return _TOKEN_RE.findall(caption.lower())


def embed_hashed(caption: str) -> np.ndarray:
    """Deterministic 768-d unit vector from the caption's tokens.

    Each token's 64-bit FNV-1a hash selects a coordinate (hash mod 768) and a
    sign (bit 63 set -> -1); signed counts are accumulated then l2-normalized.
    Identical captions yield bit-identical embeddings.
    """
    tokens = tokenize(caption)
    if not tokens:
        raise EmbeddingError("empty caption")
    vec = np.zeros(EMBED_DIM, dtype=np.float64)
    for tok in tokens:
        h = fnv1a_64(tok.encode("utf-8"))
        sign = -1.0 if (h >> 63) & 1 else 1.0
        vec[h % EMBED_DIM] += sign
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        raise EmbeddingError("caption tokens cancel to a zero embedding")
    return (vec / norm).astype(np.float32)


@dataclass
class EmbeddingTable:
    """Caption-id -> embedding map with a declared dimension and provenance."""

    entries: dict = field(default_factory=dict)
    dim: int = EMBED_DIM
    provenance: str = "hashed"

    def __len__(self) -> int:
        return len(self.entries)

    def add(self, record_id: str, values: np.ndarray) -> None:
        vec = np.asarray(values, dtype=np.float32)
        if vec.shape != (self.dim,):
            raise PcebDimensionMismatch(
                f"embedding for {record_id!r} has shape {vec.shape}, expected ({self.dim},)"
            )
        if record_id in self.entries:
            raise PcebDuplicateId(f"duplicate id {record_id!r}")
        self.entries[record_id] = vec

    def get(self, record_id: str) -> np.ndarray | None:
        return self.entries.get(record_id)


def store_embedding_table(table: EmbeddingTable, path) -> None:
    """Write a PCEB file: magic, u32 dim, u64 count, then per record
    u32 id-length + UTF-8 id + dim float32 values. Little-endian, no padding."""
    with open(path, "wb") as fh:
        fh.write(PCEB_MAGIC)
        fh.write(struct.pack("<I", table.dim))
        fh.write(struct.pack("<Q", len(table.entries)))
        for record_id, vec in table.entries.items():
            id_bytes = record_id.encode("utf-8")
            fh.write(struct.pack("<I", len(id_bytes)))
            fh.write(id_bytes)
            fh.write(np.asarray(vec, dtype="<f4").tobytes())


def load_embedding_table(path, expected_dim: int = EMBED_DIM) -> EmbeddingTable:
    """Load a PCEB file, validating magic, dimension, count and id uniqueness."""
    with open(path, "rb") as fh:
        data = fh.read()

    def take(offset: int, n: int, what: str) -> bytes:
        if offset + n > len(data):
            raise PcebTruncated(f"unexpected EOF at offset {len(data)} while reading {what}")
        return data[offset:offset + n]

    if take(0, len(PCEB_MAGIC), "magic") != PCEB_MAGIC:
        raise PcebBadMagic(f"bad magic {data[:len(PCEB_MAGIC)]!r}")
    off = len(PCEB_MAGIC)
    (dim,) = struct.unpack("<I", take(off, 4, "dim"))
    off += 4
    if dim != expected_dim:
        raise PcebDimensionMismatch(f"dimension mismatch: file has {dim}, expected {expected_dim}")
    (count,) = struct.unpack("<Q", take(off, 8, "count"))
    off += 8

    table = EmbeddingTable(dim=dim, provenance="imported")
    vec_bytes = 4 * dim
    for i in range(count):
        (id_len,) = struct.unpack("<I", take(off, 4, f"record {i} id length"))
        off += 4
        record_id = take(off, id_len, f"record {i} id").decode("utf-8")
        off += id_len
        vec = np.frombuffer(take(off, vec_bytes, f"record {i} values"), dtype="<f4").copy()
        off += vec_bytes
        if record_id in table.entries:
            raise PcebDuplicateId(f"duplicate id {record_id!r} at record {i}")
        table.entries[record_id] = vec
    if off != len(data):
        raise PcebError(f"{len(data) - off} trailing bytes after {count} records")
    return table


@dataclass(frozen=True)
class ResolvedEmbedding:
    """Embedding plus which source produced it, for reproducibility logs."""

    values: np.ndarray
    source: str  # "table" | "hashed"


def resolve_embedding(sample, table: EmbeddingTable | None = None,
                      allow_fallback: bool = True) -> ResolvedEmbedding:
    """Look the sample up in the table if given, else hash its caption."""
    if table is not None:
        vec = table.get(sample.id)
        if vec is not None:
            return ResolvedEmbedding(values=vec, source="table")
        if not allow_fallback:
            raise EmbeddingError(f"embedding not found for id {sample.id!r}")
    return ResolvedEmbedding(values=embed_hashed(sample.caption), source="hashed")
