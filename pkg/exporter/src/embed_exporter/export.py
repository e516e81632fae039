"""Export job orchestration: read captions, encode, normalize, write."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoders import get_encoder
from .jsonl import read_caption_records
from .pceb import write_pceb

CORE_DIM = 768


class ExportError(ValueError):
    pass


@dataclass(frozen=True)
class ExportJob:
    input: str
    output: str
    encoder_name: str = "dev-hash64"
    batch_size: int = 32
    device: str = "cpu"

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ExportError(f"batch_size must be >= 1, got {self.batch_size}")


def export_embeddings(job: ExportJob) -> dict:
    """Encode every caption and write the PCEB table plus a manifest.

    Output rows are ℓ2-normalized and written in input order. The manifest
    (written next to the table as `<output>.manifest.json`) records the
    encoder identity and version, the record count, and a SHA-256 content
    hash of the written table. Returns the manifest dict.
    """
    job.validate()
    encoder = get_encoder(job.encoder_name)
    if encoder.dim != CORE_DIM:
        raise ExportError(
            f"encoder {encoder.name!r} outputs dim {encoder.dim}, "
            f"but the pose toolkit requires {CORE_DIM}; aborting before write")

    pairs = read_caption_records(job.input)
    captions = [caption for _, caption in pairs]
    if captions:
        matrix = np.asarray(
            encoder.encode(captions, job.batch_size, job.device),
            dtype=np.float32)
    else:
        matrix = np.empty((0, CORE_DIM), dtype=np.float32)
    if matrix.shape != (len(pairs), CORE_DIM):
        raise ExportError(
            f"encoder {encoder.name!r} returned shape {matrix.shape}, "
            f"expected ({len(pairs)}, {CORE_DIM}); aborting before write")

    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    if matrix.size and not np.all(np.isfinite(norms)):
        raise ExportError("encoder produced non-finite embeddings")
    if matrix.size and np.any(norms == 0.0):
        raise ExportError("encoder produced an all-zero embedding")
    if matrix.size:
        matrix = (matrix / norms).astype(np.float32)

    out_path = Path(job.output)
    records = [(record_id, matrix[i]) for i, (record_id, _) in enumerate(pairs)]
    write_pceb(out_path, records, CORE_DIM)

    digest = hashlib.sha256(out_path.read_bytes()).hexdigest()
    manifest = {
        "encoder": encoder.name,
        "encoder_version": encoder.version,
        "dim": CORE_DIM,
        "count": len(records),
        "input": str(job.input),
        "output": str(out_path),
        "content_sha256": digest,
        "normalized": True,
    }
    manifest_path = out_path.with_name(out_path.name + ".manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
