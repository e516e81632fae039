"""Minimal PoseCap JSONL reading: one JSON object per line, with the `id`
and `caption` fields the exporter needs. Other fields pass through untouched
elsewhere in the toolchain and are ignored here."""

from __future__ import annotations

import json
from pathlib import Path


class CaptionFileError(ValueError):
    pass


def read_caption_records(path) -> list[tuple[str, str]]:
    """Return (id, caption) pairs in file order.

    Duplicate ids abort with every offender listed, since an embedding table
    keyed by id cannot represent them.
    """
    pairs: list[tuple[str, str]] = []
    seen: dict[str, int] = {}
    duplicates: dict[str, list[int]] = {}
    with open(Path(path), "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                raise CaptionFileError(f"line {lineno}: invalid JSON: {err}") from err
            if not isinstance(record, dict):
                raise CaptionFileError(f"line {lineno}: expected an object")
            for field in ("id", "caption"):
                if field not in record:
                    raise CaptionFileError(f"line {lineno}: missing {field!r}")
            record_id, caption = str(record["id"]), str(record["caption"])
            if record_id in seen:
                duplicates.setdefault(record_id, [seen[record_id]]).append(lineno)
            else:
                seen[record_id] = lineno
            pairs.append((record_id, caption))
    if duplicates:
        listing = "; ".join(
            f"{rid!r} on lines {', '.join(map(str, lines))}"
            for rid, lines in sorted(duplicates.items()))
        raise CaptionFileError(f"duplicate ids: {listing}")
    return pairs
