"""Caption+keypoint corpus files.

One JSON object per line, UTF-8, with keys exactly: id, caption, keypoints
(18 [x, y] pixel pairs), visibility (18 ints in {0,1}), width, height.
Poses are stored in pixels; in memory they are normalized to [-1, 1] with
invisible joints parked at the origin (pixel (w/2, h/2)).

A corpus on disk is a directory holding train.jsonl / val.jsonl / test.jsonl
plus a manifest.json describing provenance and file digests.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .skeleton import (NUM_JOINTS, Pose, PoseSample, VisibilityVector,
                       denormalize_coords, normalize_coords, validate_sample)

SPLIT_NAMES = ("train", "val", "test")
MANIFEST_NAME = "manifest.json"
FORMAT_ID = "caption-pose-jsonl-v1"


class CorpusError(ValueError):
    """A corpus file violates the record schema."""


def sample_to_record(sample: PoseSample) -> dict:
    """Serialize one sample to the line-record dict (pixel coordinates)."""
    w, h = sample.source_width, sample.source_height
    keypoints = []
    for i in range(NUM_JOINTS):
        px, py = denormalize_coords(sample.pose.joints[i], w, h)
        keypoints.append([px, py])
    return {
        "id": sample.id,
        "caption": sample.caption,
        "keypoints": keypoints,
        "visibility": [int(v) for v in sample.visibility.v],
        "width": int(w),
        "height": int(h),
    }


def record_to_sample(record: dict) -> PoseSample:
    """Parse one line-record dict back into a normalized sample."""
    required = ("id", "caption", "keypoints", "visibility", "width", "height")
    missing = [k for k in required if k not in record]
    if missing:
        raise CorpusError(f"record missing keys {missing}")
    unknown = [k for k in record if k not in required]
    if unknown:
        raise CorpusError(f"record has unknown keys {unknown}")
    w, h = record["width"], record["height"]
    kps = record["keypoints"]
    vis = record["visibility"]
    if len(kps) != NUM_JOINTS or any(len(p) != 2 for p in kps):
        raise CorpusError(f"record {record['id']!r}: keypoints must be "
                          f"{NUM_JOINTS} [x, y] pairs")
    if len(vis) != NUM_JOINTS or any(v not in (0, 1) for v in vis):
        raise CorpusError(f"record {record['id']!r}: visibility must be "
                          f"{NUM_JOINTS} ints in {{0,1}}")
    joints = np.zeros((NUM_JOINTS, 2))
    for i, (px, py) in enumerate(kps):
        x, y = normalize_coords((px, py), w, h)
        joints[i] = (x, y)
    # denormalize/normalize round trips are exact only at power-of-two sides;
    # absorb the half-ulp overshoot rather than failing validation
    np.clip(joints, -1.0, 1.0, out=joints)
    sample = PoseSample(id=str(record["id"]), caption=record["caption"],
                        pose=Pose(joints), visibility=VisibilityVector(vis),
                        source_width=int(w), source_height=int(h))
    report = validate_sample(sample)
    if not report.ok:
        raise CorpusError(f"record {record['id']!r} invalid: "
                          + "; ".join(report.violations))
    return sample


def record_line(record: dict) -> str:
    """Canonical single-line encoding: fixed key order, compact separators."""
    return json.dumps(record, ensure_ascii=False, separators=(",", ":"))


def write_jsonl(samples, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for sample in samples:
            fh.write(record_line(sample_to_record(sample)))
            fh.write("\n")


def read_jsonl(path) -> list[PoseSample]:
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                raise CorpusError(f"{path}:{lineno}: not valid JSON ({err})") from None
            try:
                samples.append(record_to_sample(record))
            except CorpusError as err:
                raise CorpusError(f"{path}:{lineno}: {err}") from None
    return samples


@dataclass
class Corpus:
    """Three split lists plus provenance metadata."""

    train: list = field(default_factory=list)
    val: list = field(default_factory=list)
    test: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def split(self, name: str) -> list:
        if name not in SPLIT_NAMES:
            raise KeyError(f"unknown split {name!r}, expected one of {SPLIT_NAMES}")
        return getattr(self, name)

    def splits(self) -> dict:
        return {name: getattr(self, name) for name in SPLIT_NAMES}

    def __len__(self) -> int:
        return len(self.train) + len(self.val) + len(self.test)


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def corpus_digest(directory) -> str:
    """Single digest over the three split files, order-fixed."""
    acc = hashlib.sha256()
    for name in SPLIT_NAMES:
        acc.update(Path(directory, f"{name}.jsonl").read_bytes())
    return acc.hexdigest()


def content_digest(corpus: Corpus) -> str:
    """In-memory digest; equals corpus_digest of the saved directory."""
    acc = hashlib.sha256()
    for name in SPLIT_NAMES:
        for sample in corpus.split(name):
            acc.update(record_line(sample_to_record(sample)).encode("utf-8"))
            acc.update(b"\n")
    return acc.hexdigest()


def save_corpus(corpus: Corpus, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in SPLIT_NAMES:
        write_jsonl(corpus.split(name), directory / f"{name}.jsonl")
    manifest = {
        "format": FORMAT_ID,
        "counts": {name: len(corpus.split(name)) for name in SPLIT_NAMES},
        "meta": corpus.meta,
        "digests": {name: file_digest(directory / f"{name}.jsonl")
                    for name in SPLIT_NAMES},
    }
    with open(directory / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_corpus(directory) -> Corpus:
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    meta = {}
    if manifest_path.exists():
        with open(manifest_path, encoding="utf-8") as fh:
            meta = json.load(fh).get("meta", {})
    corpus = Corpus(meta=meta)
    for name in SPLIT_NAMES:
        path = directory / f"{name}.jsonl"
        if not path.exists():
            raise CorpusError(f"missing split file {path}")
        setattr(corpus, name, read_jsonl(path))
    return corpus


__all__ = ["Corpus", "CorpusError", "sample_to_record", "record_to_sample",
           "record_line", "write_jsonl", "read_jsonl", "save_corpus",
           "load_corpus", "file_digest", "corpus_digest", "content_digest",
           "SPLIT_NAMES"]
