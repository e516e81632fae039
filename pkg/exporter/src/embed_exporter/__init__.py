"""Offline caption-embedding exporter.

Reads PoseCap JSONL caption files, encodes each caption with a pretrained
text encoder, and writes PCEB embedding tables plus a manifest recording
the encoder identity and a content hash. The pose toolkit consumes the
PCEB files; the two packages share only the file formats.
"""

from .encoders import available_encoders, get_encoder
from .export import ExportJob, export_embeddings
from .pceb import PcebFormatError, read_pceb, write_pceb
from .verify import VerifyError, verify_pceb

__all__ = [
    "ExportJob",
    "export_embeddings",
    "available_encoders",
    "get_encoder",
    "read_pceb",
    "write_pceb",
    "PcebFormatError",
    "verify_pceb",
    "VerifyError",
]

__version__ = "0.1.0"
