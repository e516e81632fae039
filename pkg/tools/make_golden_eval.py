"""Produce the committed golden eval artifacts (run from the repo root).

Writes tests/golden/eval/: a small synthetic corpus, a checkpoint trained on
it with fixed flags, and the EvalReport of that checkpoint on the val split.
The accompanying test re-runs the eval command against these files and
requires byte identity, which catches any drift in model arithmetic,
serialization, or metric computation. Regenerate only after an intentional
change to one of those, and say so in the commit.
"""

import json
import shutil
import sys
from pathlib import Path

from textpose.cli import main

ROOT = Path(__file__).resolve().parent.parent
GOLDEN = ROOT / "tests" / "golden" / "eval"

TRAIN_CONFIG = {
    "epochs": 2,
    "batch_size": 32,
    "learning_rate": 1e-3,
    "seed": 5,
    "model": {"hidden_dim": 32, "num_layers": 1, "num_heads": 2,
              "proj_dim": 16},
}


def run(args: list[str]) -> None:
    rc = main(args)
    if rc != 0:
        sys.exit(f"command failed ({rc}): {' '.join(args)}")


if __name__ == "__main__":
    shutil.rmtree(GOLDEN, ignore_errors=True)
    GOLDEN.mkdir(parents=True)
    corpus = GOLDEN / "corpus"
    run(["synth", "--seed", "7", "--n", "120", "--out", str(corpus)])

    config = GOLDEN / "train_config.json"
    config.write_text(json.dumps(TRAIN_CONFIG, indent=2, sort_keys=True) + "\n",
                      encoding="utf-8")
    run_dir = GOLDEN / "run"
    run(["train", "--corpus", str(corpus), "--out", str(run_dir),
         "--config", str(config)])
    for suffix in ("", ".json"):  # array blob plus its JSON sidecar
        (GOLDEN / f"checkpoint.pgck{suffix}").write_bytes(
            (run_dir / f"final.pgck{suffix}").read_bytes())
    shutil.rmtree(run_dir)

    run(["eval", "--checkpoint", str(GOLDEN / "checkpoint.pgck"),
         "--corpus", str(corpus), "--split", "val",
         "--out", str(GOLDEN / "report.json")])
    print("golden eval artifacts written to", GOLDEN)
