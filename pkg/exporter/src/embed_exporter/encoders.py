"""Text-encoder registry.

Each encoder is a callable `(captions: list[str], batch_size: int,
device: str) -> np.ndarray of shape (n, dim)` plus a declared output
dimension and a version string for the manifest. Identical caption strings
always produce identical rows (encoders run in eval mode, no sampling).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class EncoderSpec:
    name: str
    dim: int
    version: str
    encode: Callable[[list[str], int, str], np.ndarray]


def _dev_hash64_encode(captions: list[str], batch_size: int,
                       device: str) -> np.ndarray:
    """Deterministic stand-in encoder: a unit Gaussian vector seeded by the
    SHA-256 of each caption. No model weights, no network; meant for
    pipeline tests and dry runs, not for semantic quality."""
    out = np.empty((len(captions), 768), dtype=np.float32)
    for i, caption in enumerate(captions):
        digest = hashlib.sha256(caption.encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        vec = rng.standard_normal(768)
        out[i] = (vec / np.linalg.norm(vec)).astype(np.float32)
    return out


def _make_clip_encoder(model_name: str):
    def encode(captions: list[str], batch_size: int, device: str) -> np.ndarray:
        import torch
        from transformers import CLIPTextModelWithProjection, CLIPTokenizer

        tokenizer = CLIPTokenizer.from_pretrained(model_name)
        model = CLIPTextModelWithProjection.from_pretrained(model_name)
        model.eval().to(device)
        chunks = []
        with torch.no_grad():
            for start in range(0, len(captions), batch_size):
                batch = captions[start:start + batch_size]
                tokens = tokenizer(batch, padding=True, truncation=True,
                                   return_tensors="pt").to(device)
                chunks.append(model(**tokens).text_embeds.cpu().numpy())
        if not chunks:
            return np.empty((0, 768), dtype=np.float32)
        return np.concatenate(chunks, axis=0).astype(np.float32)

    return encode


_REGISTRY = {
    "dev-hash64": EncoderSpec(
        name="dev-hash64", dim=768, version="1",
        encode=_dev_hash64_encode),
    "clip-vit-large-patch14": EncoderSpec(
        name="clip-vit-large-patch14", dim=768,
        version="openai/clip-vit-large-patch14",
        encode=_make_clip_encoder("openai/clip-vit-large-patch14")),
}


class UnknownEncoderError(ValueError):
    pass


def available_encoders() -> list[str]:
    return sorted(_REGISTRY)


def get_encoder(name: str) -> EncoderSpec:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise UnknownEncoderError(
            f"unknown encoder {name!r}; available: "
            f"{', '.join(available_encoders())}") from None
