"""Structural validation of PCEB files with human-readable summaries."""

from __future__ import annotations

import numpy as np

from .pceb import PcebFormatError, read_pceb

CORE_DIM = 768


class VerifyError(ValueError):
    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset


def verify_pceb(path, expected_dim: int = CORE_DIM) -> dict:
    """Validate magic, dimension, count, and per-record norms.

    Returns summary statistics; raises VerifyError (with the byte offset
    when known) for any structural violation.
    """
    try:
        dim, records = read_pceb(path)
    except PcebFormatError as err:
        raise VerifyError(str(err), offset=err.offset) from err
    if dim != expected_dim:
        raise VerifyError(
            f"dimension mismatch: expected {expected_dim}, file has {dim}",
            offset=len(b"PCEB1\x00"))
    norms = (np.linalg.norm(np.stack([vec for _, vec in records]), axis=1)
             if records else np.empty(0))
    if records and not np.all(np.isfinite(norms)):
        bad = [records[i][0] for i in np.nonzero(~np.isfinite(norms))[0][:5]]
        raise VerifyError(f"non-finite embedding norms for ids {bad}")
    return {
        "path": str(path),
        "dim": dim,
        "count": len(records),
        "norm_min": float(norms.min()) if records else None,
        "norm_max": float(norms.max()) if records else None,
        "norm_mean": float(norms.mean()) if records else None,
    }
