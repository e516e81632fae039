"""Command-line surface.

Subcommands: synth, import-openpose, train, eval, sweep, ablate, infer,
render. Configs come from TOML or JSON files; command-line flags override
config values and the override is logged to stderr. Exit codes: 0 success,
2 usage error, 3 data error, 4 runtime error. On failure a single JSON
object {"error", "message", "code"} is printed to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import render as rendering
from .data import (SPLIT_NAMES, CorpusError, load_corpus, read_jsonl,
                   record_line, record_to_sample, sample_to_record,
                   save_corpus)
from .diffcore import ConfigError
from .model import batch_forward, load_model
from .skeleton import NUM_JOINTS, denormalize_coords
from .synthcorpus import SynthSpec, generate_corpus
from .textenc import embed_hashed, load_embedding_table
from .trainer import (SweepGrid, TrainConfig, ablate, ablation_preset,
                      build_dataclass, default_sweep_grid, evaluate_split,
                      sweep, train)


def _emit(payload: dict) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def _fail(code: int, err: Exception) -> int:
    payload = {"error": type(err).__name__, "message": str(err), "code": code}
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_config_file(path) -> dict:
    p = Path(path)
    text = p.read_text(encoding="utf-8")
    suffix = p.suffix.lower()
    if suffix == ".toml":
        return tomllib.loads(text)
    if suffix == ".json":
        return json.loads(text)
    raise ConfigError(f"config file {p} must end in .toml or .json")


# flag name -> (config section, key); sections index into the raw config dict
_TRAIN_FLAGS = (
    ("--epochs", None, "epochs"),
    ("--batch-size", None, "batch_size"),
    ("--lr", None, "learning_rate"),
    ("--seed", None, "seed"),
    ("--eval-every", None, "eval_every"),
    ("--hidden-dim", "model", "hidden_dim"),
    ("--num-layers", "model", "num_layers"),
    ("--num-heads", "model", "num_heads"),
    ("--dropout", "model", "dropout_p"),
)


def build_train_config(args) -> TrainConfig:
    raw = load_config_file(args.config) if getattr(args, "config", None) else {}
    config = TrainConfig.from_dict(raw)
    for flag, section, key in _TRAIN_FLAGS:
        value = getattr(args, key, None)
        if value is None:
            continue
        in_file = raw.get(section, {}) if section else raw
        if key in in_file and in_file[key] != value:
            print(f"flag {flag}={value} overrides config {key}={in_file[key]}",
                  file=sys.stderr)
        if section == "model":
            config = dataclasses.replace(
                config, model=dataclasses.replace(config.model, **{key: value}))
        else:
            config = dataclasses.replace(config, **{key: value})
    config.validate()
    return config


def _load_table(args):
    path = getattr(args, "embeddings", None)
    return load_embedding_table(path) if path else None


def _safe_name(record_id: str) -> str:
    return "".join(c if c.isalnum() or c in "._-" else "_" for c in record_id)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    spec = SynthSpec(seed=args.seed, n_samples=args.n,
                     jitter_sigma=args.jitter, occlusion_rate=args.occlusion,
                     caption_paraphrase_count=args.paraphrases)
    try:
        spec.validate()
    except ValueError as err:
        message = (str(err)
                   .replace("n_samples", "--n")
                   .replace("jitter_sigma", "--jitter")
                   .replace("occlusion_rate", "--occlusion")
                   .replace("caption_paraphrase_count", "--paraphrases"))
        args.parser.error(message)
    corpus = generate_corpus(spec)
    save_corpus(corpus, args.out)
    _emit({"out": str(args.out),
           "counts": {name: len(split) for name, split in corpus.splits().items()}})
    return 0


def _stable_record(record: dict) -> dict:
    """Iterate the normalize/denormalize pass until the written pixels are a
    fixed point, so importing our own output reproduces it byte for byte."""
    for _ in range(4):
        canonical = sample_to_record(record_to_sample(record))
        if canonical == record:
            return record
        record = canonical
    raise CorpusError(f"record {record['id']!r} does not stabilize under "
                      "coordinate normalization")


def cmd_import_openpose(args) -> int:
    in_dir = Path(args.in_dir)
    if not in_dir.is_dir():
        raise NotADirectoryError(f"--in {in_dir} is not a directory")
    with open(args.captions, encoding="utf-8") as fh:
        captions = json.load(fh)
    if not isinstance(captions, dict):
        raise CorpusError(f"captions file {args.captions} must map id to caption")

    width, height = args.width, args.height
    counts = {"written": 0, "skipped_no_caption": 0, "skipped_no_people": 0}
    errors = []
    out_lines = []
    captions_path = Path(args.captions).resolve()
    files = [p for p in sorted(in_dir.glob("*.json"))
             if p.resolve() != captions_path]
    for path in files:
        record_id = path.stem
        if record_id.endswith("_keypoints"):
            record_id = record_id[: -len("_keypoints")]
        try:
            detection = json.loads(path.read_text(encoding="utf-8"))
            people = detection.get("people", [])
            if not people:
                counts["skipped_no_people"] += 1
                continue
            flat = people[0].get("pose_keypoints_2d")
            if not isinstance(flat, list) or len(flat) != 3 * NUM_JOINTS:
                raise CorpusError(
                    f"pose_keypoints_2d must hold {3 * NUM_JOINTS} floats")
            caption = captions.get(record_id)
            if caption is None:
                counts["skipped_no_caption"] += 1
                continue
            keypoints, visibility = [], []
            for j in range(NUM_JOINTS):
                x, y, conf = flat[3 * j: 3 * j + 3]
                if float(conf) > args.conf_threshold:
                    keypoints.append([float(x), float(y)])
                    visibility.append(1)
                else:  # park invisible joints at the frame center
                    keypoints.append([width / 2.0, height / 2.0])
                    visibility.append(0)
            record = {"id": record_id, "caption": caption,
                      "keypoints": keypoints, "visibility": visibility,
                      "width": width, "height": height}
            out_lines.append(record_line(_stable_record(record)))
            counts["written"] += 1
        except (ValueError, TypeError, OSError) as err:
            errors.append({"file": path.name, "error": str(err)})
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        for line in out_lines:
            fh.write(line + "\n")
    _emit({**counts, "errors": errors, "out": str(args.out)})
    return 0


def cmd_train(args) -> int:
    corpus = load_corpus(args.corpus)
    config = build_train_config(args)
    table = _load_table(args)
    _, history = train(corpus, config, table=table, out_dir=args.out)
    summary = {"out": str(args.out), "epochs": len(history),
               "checkpoints": {"final": "final.pgck", "best": "best.pgck"}}
    if history and "val" in history[-1]:
        val = history[-1]["val"]
        summary["final_val"] = {key: val[key] for key in
                                ("pckh_05", "pck_010", "mpjpe_px", "vis_map")}
    _emit(summary)
    return 0


def cmd_eval(args) -> int:
    corpus = load_corpus(args.corpus)
    model = load_model(args.checkpoint)
    report = evaluate_split(model, corpus.split(args.split), table=_load_table(args))
    text = report.to_json() + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        _emit({"out": str(args.out), "split": args.split,
               "n_samples": report.n_samples, "mpjpe_px": report.mpjpe_px})
    else:
        sys.stdout.write(text)
    return 0


def cmd_sweep(args) -> int:
    corpus = load_corpus(args.corpus)
    base = build_train_config(args)
    if args.grid:
        raw = load_config_file(args.grid)
        grid = build_dataclass(SweepGrid,
                               {k: tuple(v) for k, v in raw.items()}, "grid")
    else:
        grid = default_sweep_grid()

    def progress(row):
        print(f"sweep {row['factor']}={row['value']}: {row['status']} "
              f"({row['wall_time_s']} s)", file=sys.stderr)

    report = sweep(corpus, grid, base, table=_load_table(args), log=progress)
    _write_json(args.out, report)
    ok = sum(1 for r in report["rows"] if r["status"] == "ok")
    _emit({"out": str(args.out), "rows": len(report["rows"]), "ok": ok,
           "best": report["ranking"][0] if report["ranking"] else None})
    return 0


def cmd_ablate(args) -> int:
    corpus = load_corpus(args.corpus)
    base = build_train_config(args)

    def progress(row):
        print(f"ablation {row['label']}: {row['status']} "
              f"({row['wall_time_s']} s)", file=sys.stderr)

    report = ablate(corpus, ablation_preset(), base,
                    table=_load_table(args), log=progress)
    _write_json(args.out, report)
    _emit({"out": str(args.out), "rows": len(report["rows"])})
    return 0


def _caption_pairs(args) -> list[tuple[str, str]]:
    if args.caption is not None:
        return [("caption-000000", args.caption)]
    text = Path(args.captions).read_text(encoding="utf-8")
    try:
        payload = json.loads(text)
    except json.JSONDecodeError:
        lines = [line.strip() for line in text.splitlines() if line.strip()]
        return [(f"caption-{i:06d}", line) for i, line in enumerate(lines)]
    if isinstance(payload, dict):
        return [(str(k), str(v)) for k, v in payload.items()]
    if isinstance(payload, list):
        return [(f"caption-{i:06d}", str(c)) for i, c in enumerate(payload)]
    raise CorpusError("captions file must be a JSON object/array or text lines")


def cmd_infer(args) -> int:
    model = load_model(args.checkpoint)
    table = _load_table(args)
    pairs = _caption_pairs(args)
    if not pairs:
        raise CorpusError("no captions to run")
    side = rendering.CANVAS
    records, timings = [], []
    for record_id, caption in pairs:
        started = time.perf_counter()
        vec = table.get(record_id) if table is not None else None
        if vec is None:
            vec = embed_hashed(caption)
        out = batch_forward(model, vec[None, :])[0]
        elapsed_ms = (time.perf_counter() - started) * 1000.0
        keypoints = []
        for i in range(NUM_JOINTS):
            px, py = denormalize_coords(out.coords.joints[i], side, side)
            keypoints.append([float(px), float(py)])
        probs = [float(p) for p in out.vis_probs]
        records.append({"id": record_id, "caption": caption,
                        "keypoints": keypoints,
                        "visibility": [int(p >= 0.5) for p in probs],
                        "vis_probs": probs, "width": side, "height": side})
        timings.append({"id": record_id, "time_ms": round(elapsed_ms, 3)})
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False,
                                separators=(",", ":")) + "\n")
    if args.render_dir:
        out_dir = Path(args.render_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for record in records:
            name = f"{_safe_name(record['id'])}.{args.format}"
            rendering.render_record(record, out_dir / name, args.format)
    # timing goes to stdout, not into the artifact, so that rerunning the
    # command produces byte-identical output files
    _emit({"out": str(args.out), "records": len(records),
           "timings_ms": timings})
    return 0


def cmd_render(args) -> int:
    samples = read_jsonl(args.poses)
    if args.limit is not None:
        samples = samples[: args.limit]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for sample in samples:
        record = sample_to_record(sample)
        name = f"{_safe_name(record['id'])}.{args.format}"
        rendering.render_record(record, out_dir / name, args.format)
    _emit({"out": str(out_dir), "format": args.format,
           "rendered": len(samples)})
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_embeddings_flag(p) -> None:
    p.add_argument("--embeddings", metavar="PCEB",
                   help="embedding table; captions without an entry fall "
                        "back to the hashed encoder")


def _add_config_flags(p) -> None:
    p.add_argument("--config", metavar="FILE", help="TOML or JSON train config")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    p.add_argument("--num-layers", dest="num_layers", type=int)
    p.add_argument("--num-heads", dest="num_heads", type=int)
    p.add_argument("--dropout", dest="dropout_p", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="textpose",
        description="Caption-conditioned 2D pose generation toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic caption+pose corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=1000, help="sample count (>= 100)")
    p.add_argument("--jitter", type=float, default=0.01,
                   help="coordinate noise sigma in normalized units")
    p.add_argument("--occlusion", type=float, default=0.05,
                   help="per-joint occlusion rate in [0.0, 0.5)")
    p.add_argument("--paraphrases", type=int, default=3)
    p.add_argument("--out", required=True, help="output corpus directory")
    p.set_defaults(func=cmd_synth, parser=p)

    p = sub.add_parser("import-openpose",
                       help="convert OpenPose detection JSON to corpus JSONL")
    p.add_argument("--in", dest="in_dir", required=True,
                   help="directory of *.json detection files")
    p.add_argument("--captions", required=True,
                   help="JSON file mapping record id to caption")
    p.add_argument("--out", required=True, help="output JSONL file")
    p.add_argument("--conf-threshold", type=float, default=0.1,
                   help="visibility = confidence strictly above this")
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--height", type=int, default=256)
    p.set_defaults(func=cmd_import_openpose, parser=p)

    p = sub.add_parser("train", help="fit a model on a corpus directory")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="run output directory")
    _add_config_flags(p)
    _add_embeddings_flag(p)
    p.set_defaults(func=cmd_train, parser=p)

    p = sub.add_parser("eval", help="score a checkpoint on a corpus split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", choices=SPLIT_NAMES, default="test")
    p.add_argument("--out", help="report file; stdout when omitted")
    _add_embeddings_flag(p)
    p.set_defaults(func=cmd_eval, parser=p)

    p = sub.add_parser("sweep", help="one-factor hyperparameter sweep")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="report JSON file")
    p.add_argument("--grid", metavar="FILE",
                   help="TOML or JSON candidate lists; default is the "
                        "19-row preset")
    _add_config_flags(p)
    _add_embeddings_flag(p)
    p.set_defaults(func=cmd_sweep, parser=p)

    p = sub.add_parser("ablate", help="run the five-row structural ablation")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="report JSON file")
    _add_config_flags(p)
    _add_embeddings_flag(p)
    p.set_defaults(func=cmd_ablate, parser=p)

    p = sub.add_parser("infer", help="predict poses for captions")
    p.add_argument("--checkpoint", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--caption", help="single caption string")
    group.add_argument("--captions",
                       help="JSON map/array of captions, or plain text lines")
    p.add_argument("--out", required=True, help="predictions JSONL file")
    p.add_argument("--render-dir", help="also draw each predicted pose here")
    p.add_argument("--format", choices=rendering.FORMATS, default="svg")
    _add_embeddings_flag(p)
    p.set_defaults(func=cmd_infer, parser=p)

    p = sub.add_parser("render", help="draw corpus poses as SVG or PNG")
    p.add_argument("--poses", required=True, help="corpus JSONL file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--format", choices=rendering.FORMATS, default="svg")
    p.add_argument("--limit", type=int, help="render at most this many poses")
    p.set_defaults(func=cmd_render, parser=p)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as err:  # malformed inputs, bad paths
        return _fail(3, err)
    except Exception as err:  # aborted runs, numeric failures
        return _fail(4, err)


if __name__ == "__main__":
    sys.exit(main())
