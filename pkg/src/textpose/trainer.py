"""Optimization loop, sweep and ablation harnesses, gradient checking.

`train` runs Adam on the five-part objective with per-epoch validation and
writes final plus best-by-MPJPE checkpoints. `sweep` varies one
hyperparameter at a time around a base config; `ablate` retrains under each
structural flag set. Both record failed rows and keep going. `grad_check`
compares tape gradients against central finite differences on a small f64
model.

Reports and history are plain JSON-serializable dicts; run directories get a
manifest with config and corpus digests so results can be tied back to their
exact inputs.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import Corpus, content_digest
from .diffcore import ConfigError, Parameter, Tape
from .losses import (LossBreakdown, LossWeights, contrastive_loss, coord_loss,
                     inv_loss, skel_loss, total_loss, vis_loss)
from .metrics import EvalReport, evaluate_outputs
from .model import (FULL_MODEL, AblationFlags, PoseGenConfig, PoseGenModel,
                    batch_forward, init_model, save_model)
from .textenc import resolve_embedding

EVAL_CHUNK = 256
FD_STEP = 1e-5


class TrainingAborted(RuntimeError):
    """A batch produced a non-finite loss; the run cannot continue."""


def build_dataclass(cls, d: dict, label: str):
    """Constructor with unknown-key reporting, for config files."""
    valid = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - valid)
    if unknown:
        raise ConfigError(f"unknown {label} keys {unknown}; "
                          f"valid keys: {sorted(valid)}")
    return cls(**d)


@dataclass(frozen=True)
class TrainConfig:
    """One training run: optimizer settings, loss weights, architecture."""

    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weights: LossWeights = field(default_factory=LossWeights)
    model: PoseGenConfig = field(default_factory=PoseGenConfig)
    seed: int = 0
    eval_every: int = 1

    def validate(self) -> None:
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        # zero is the documented null-update edge case; negative is an error
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            raise ConfigError("adam betas must lie in [0, 1)")
        if self.adam_eps <= 0:
            raise ConfigError(f"adam_eps must be positive, got {self.adam_eps}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")
        self.weights.validate()
        self.model.validate()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        weights = build_dataclass(LossWeights, d.pop("weights", {}), "loss")
        model = build_dataclass(PoseGenConfig, d.pop("model", {}), "model")
        config = build_dataclass(cls, d, "train")
        return replace(config, weights=weights, model=model)


def config_hash(config: TrainConfig, ablation: AblationFlags = FULL_MODEL) -> str:
    payload = {"train": config.to_dict(), "ablation": dataclasses.asdict(ablation)}
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class Adam:
    """Adam with bias correction, constant learning rate, no weight decay."""

    def __init__(self, params: dict[str, Parameter], learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.learning_rate = float(learning_rate)
        self.beta1, self.beta2, self.eps = float(beta1), float(beta2), float(eps)
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self) -> None:
        self.t += 1
        scale1 = 1.0 - self.beta1 ** self.t
        scale2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.learning_rate != 0.0:  # keep params bit-identical at lr 0
                p.data -= self.learning_rate * (m / scale1) / (np.sqrt(v / scale2) + self.eps)


def embedding_matrix(samples, table=None) -> np.ndarray:
    """Resolve every sample's caption embedding into one [N, 768] f32 block."""
    return np.stack([resolve_embedding(s, table).values for s in samples]).astype(np.float32)


def _gt_arrays(samples) -> tuple[np.ndarray, np.ndarray]:
    coords = np.stack([s.pose.joints for s in samples]).astype(np.float64)
    vis = np.stack([np.asarray(s.visibility.v, dtype=np.float64) for s in samples])
    return coords, vis


def batch_losses(outputs: dict, gt_coords, gt_vis, weights: LossWeights,
                 ablation: AblationFlags = FULL_MODEL) -> LossBreakdown:
    """Assemble the weighted objective from model outputs, honoring flags."""
    coord = coord_loss(outputs["coords"], gt_coords, gt_vis, weights.epsilon)
    vis = vis_loss(outputs["vis_logits"], gt_vis) if ablation.use_vis_head else 0.0
    inv = inv_loss(outputs["coords"], gt_vis, weights.epsilon)
    skel = skel_loss(outputs["coords"], gt_coords)
    con = (contrastive_loss(outputs["f_text"], outputs["f_pose"], weights.tau)
           if ablation.use_contrastive else 0.0)
    return total_loss(coord, vis, inv, skel, con, weights)


def evaluate_split(model: PoseGenModel, samples, embeddings=None,
                   table=None) -> EvalReport:
    """Deterministic eval-mode pass over a split, scored against ground truth."""
    if not samples:
        raise ConfigError("cannot evaluate an empty split")
    if embeddings is None:
        embeddings = embedding_matrix(samples, table)
    outputs = []
    for start in range(0, len(samples), EVAL_CHUNK):
        outputs.extend(batch_forward(model, embeddings[start:start + EVAL_CHUNK]))
    return evaluate_outputs(outputs, samples)


def _clone_model(model: PoseGenModel, state: dict[str, np.ndarray]) -> PoseGenModel:
    params = {name: Parameter(arr.copy(), name=name, dtype=arr.dtype)
              for name, arr in state.items()}
    return PoseGenModel(model.config, model.ablation, params)


def train(corpus: Corpus, config: TrainConfig,
          ablation: AblationFlags = FULL_MODEL, table=None,
          out_dir=None, log=None) -> tuple[PoseGenModel, list[dict]]:
    """Run Adam on the training split with per-epoch validation.

    Returns the final model and a history list with one entry per epoch:
    the epoch-mean loss breakdown plus (on eval epochs) the validation
    report. With `out_dir` set, writes final and best-by-MPJPE checkpoints,
    the history, and a run manifest.
    """
    config.validate()
    ablation.validate()
    for name in ("train", "val"):
        if not corpus.split(name):
            raise ConfigError(f"corpus has an empty {name} split")

    train_samples = corpus.train
    n = len(train_samples)
    emb = embedding_matrix(train_samples, table)
    gt_coords, gt_vis = _gt_arrays(train_samples)
    val_emb = embedding_matrix(corpus.val, table)

    model = init_model(config.model, ablation)
    optimizer = Adam(model.params, config.learning_rate,
                     config.adam_beta1, config.adam_beta2, config.adam_eps)
    rng = np.random.default_rng(config.seed)

    history: list[dict] = []
    best_state: dict[str, np.ndarray] | None = None
    best_epoch: int | None = None
    best_mpjpe = np.inf
    part_names = ("coord", "vis", "inv", "skel", "con", "total")

    for epoch in range(config.epochs):
        order = rng.permutation(n)
        sums = dict.fromkeys(part_names, 0.0)
        for batch_index, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            tape = Tape()
            outputs = model.apply(emb[idx], "train", rng, tape)
            breakdown = batch_losses(outputs, gt_coords[idx], gt_vis[idx],
                                     config.weights, ablation)
            if not np.isfinite(breakdown.total):
                first, last = train_samples[idx[0]].id, train_samples[idx[-1]].id
                raise TrainingAborted(
                    f"non-finite loss at epoch {epoch} batch {batch_index} "
                    f"(samples {first} .. {last})")
            model.zero_grads()
            tape.backward(breakdown.tensor)
            optimizer.step()
            parts = breakdown.to_dict()
            for key in part_names:
                sums[key] += parts[key] * len(idx)
        entry = {"epoch": epoch,
                 "train_loss": {key: sums[key] / n for key in part_names}}
        if (epoch + 1) % config.eval_every == 0 or epoch == config.epochs - 1:
            report = evaluate_split(model, corpus.val, val_emb)
            entry["val"] = report.to_dict()
            if report.mpjpe_px < best_mpjpe:
                best_mpjpe = report.mpjpe_px
                best_epoch = epoch
                best_state = {k: p.data.copy() for k, p in model.params.items()}
        history.append(entry)
        if log is not None:
            log(entry)

    if best_state is None:  # 0 epochs or no eval epoch: the init model is "best"
        best_state = {k: p.data.copy() for k, p in model.params.items()}

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        digest = content_digest(corpus)
        extra = {"train_config": config.to_dict(), "corpus_digest": digest}
        save_model(model, out / "final.pgck", extra=extra)
        save_model(_clone_model(model, best_state), out / "best.pgck",
                   extra={**extra, "best_epoch": best_epoch})
        with open(out / "history.json", "w", encoding="utf-8") as fh:
            json.dump(history, fh, indent=2, sort_keys=True)
            fh.write("\n")
        manifest = {
            "config": config.to_dict(),
            "ablation": dataclasses.asdict(ablation),
            "config_hash": config_hash(config, ablation),
            "corpus_digest": digest,
            "embedding_source": "table" if table is not None else "hashed",
            "best_epoch": best_epoch,
            "artifacts": {"final": "final.pgck", "best": "best.pgck",
                          "history": "history.json"},
        }
        with open(out / "run_manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")

    return model, history


# ---------------------------------------------------------------------------
# one-factor-at-a-time sweep
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepGrid:
    """Candidate lists per swept hyperparameter; the defaults reproduce the
    19-row one-factor preset (3+3+2+3+3+3+2 rows around the base config)."""

    hidden_dim: tuple = (384, 512, 640)
    num_layers: tuple = (4, 6, 8)
    num_heads: tuple = (4, 8)
    dropout_p: tuple = (0.05, 0.10, 0.20)
    lambda_inv: tuple = (0.25, 0.50, 1.00)
    lambda_con: tuple = (0.05, 0.10, 0.20)
    tau: tuple = (0.05, 0.07)

    MODEL_FACTORS = ("hidden_dim", "num_layers", "num_heads", "dropout_p")
    LOSS_FACTORS = ("lambda_inv", "lambda_con", "tau")

    def rows(self):
        """Yield (factor, value) pairs in declaration order."""
        for factor in self.MODEL_FACTORS + self.LOSS_FACTORS:
            for value in getattr(self, factor):
                yield factor, value

    def validate(self, base: TrainConfig) -> None:
        for factor, value in self.rows():
            apply_factor(base, factor, value).validate()


def default_sweep_grid() -> SweepGrid:
    return SweepGrid()


def apply_factor(base: TrainConfig, factor: str, value) -> TrainConfig:
    """Derive a config differing from base in exactly one hyperparameter."""
    if factor in SweepGrid.MODEL_FACTORS:
        return replace(base, model=replace(base.model, **{factor: value}))
    if factor in SweepGrid.LOSS_FACTORS:
        return replace(base, weights=replace(base.weights, **{factor: value}))
    raise ConfigError(f"unknown sweep factor {factor!r}")


def _run_row(corpus, config, ablation, table, metric_keys):
    started = time.perf_counter()
    try:
        model, history = train(corpus, config, ablation=ablation, table=table)
        report = evaluate_split(model, corpus.val, table=table)
        row = {"status": "ok",
               "metrics": {key: getattr(report, key) for key in metric_keys},
               "report": report.to_dict(),
               "epochs_run": len(history)}
    except Exception as err:  # a failed row must not sink the harness
        row = {"status": "failed", "error": f"{type(err).__name__}: {err}"}
    row["seed"] = config.seed
    row["wall_time_s"] = round(time.perf_counter() - started, 3)
    return row


def sweep(corpus: Corpus, grid: SweepGrid, base: TrainConfig,
          ablation: AblationFlags = FULL_MODEL, table=None, log=None) -> dict:
    """Train one run per grid candidate, varying a single factor from base.

    Rows report PCKh@0.5, PCK@0.10, MPJPE, and visibility mAP on the
    validation split, plus seed and wall time. Failed rows carry the error
    and the sweep continues. Rows are ranked by validation MPJPE (ascending);
    a retrieval-recall criterion is not implemented, and the substitution is
    recorded in the report.
    """
    base.validate()
    grid.validate(base)
    metric_keys = ("pckh_05", "pck_010", "mpjpe_px", "vis_map")
    rows = []
    for factor, value in grid.rows():
        config = apply_factor(base, factor, value)
        row = _run_row(corpus, config, ablation, table, metric_keys)
        row["factor"] = factor
        row["value"] = value
        rows.append(row)
        if log is not None:
            log(row)
    ranking = sorted(
        (r for r in rows if r["status"] == "ok"),
        key=lambda r: r["metrics"]["mpjpe_px"])
    report = {
        "kind": "sweep",
        "base": base.to_dict(),
        "metric_columns": list(metric_keys),
        "ranking_criterion": "mpjpe_px",
        "ranking_note": ("rows ranked by validation MPJPE; no retrieval-recall "
                         "metric is defined in this artifact"),
        "rows": rows,
        "ranking": [{"factor": r["factor"], "value": r["value"],
                     "mpjpe_px": r["metrics"]["mpjpe_px"]} for r in ranking],
    }
    return report


# ---------------------------------------------------------------------------
# structural ablations
# ---------------------------------------------------------------------------

def ablation_preset() -> list[AblationFlags]:
    """The five standard rows: full model, then each component removed."""
    return [
        AblationFlags(),
        AblationFlags(use_contrastive=False),
        AblationFlags(use_mlp=False),
        AblationFlags(use_transformer=False),
        AblationFlags(use_vis_head=False),
    ]


def flag_label(flags: AblationFlags) -> str:
    off = [name for name, on in (
        ("contrastive", flags.use_contrastive),
        ("mlp", flags.use_mlp),
        ("transformer", flags.use_transformer),
        ("visibility head", flags.use_vis_head)) if not on]
    if not off:
        return "full model"
    return " + ".join(f"no {name}" for name in off)


def ablate(corpus: Corpus, flags_list: list[AblationFlags],
           base: TrainConfig, table=None, log=None) -> dict:
    """One training run per flag set; rows report PCK@0.05, PCK@0.10, MPJPE,
    and visibility mAP on the validation split."""
    if not flags_list:
        raise ConfigError("ablation needs at least one flag set")
    base.validate()
    for flags in flags_list:
        flags.validate()
    metric_keys = ("pck_005", "pck_010", "mpjpe_px", "vis_map")
    rows = []
    for flags in flags_list:
        row = _run_row(corpus, base, flags, table, metric_keys)
        row["label"] = flag_label(flags)
        row["flags"] = dataclasses.asdict(flags)
        rows.append(row)
        if log is not None:
            log(row)
    return {
        "kind": "ablation",
        "base": base.to_dict(),
        "metric_columns": list(metric_keys),
        "rows": rows,
    }


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------

def grad_check(config: PoseGenConfig, tolerance: float,
               batch_size: int = 2, samples_per_group: int = 8,
               seed: int = 0, weights: LossWeights | None = None,
               ablation: AblationFlags = FULL_MODEL) -> dict:
    """Compare tape gradients of the total loss against central differences.

    Builds an f64 model, draws one fixed random batch, and checks a sample
    of coordinates per parameter group (the largest-magnitude analytic entry
    plus `samples_per_group` random ones). Relative error uses
    |a - fd| / max(|a|, |fd|, 1e-6). A tolerance of 0 is reserved as a
    harness sanity check and always fails.
    """
    config.validate()
    if weights is None:
        weights = LossWeights()
    model = init_model(config, ablation, dtype=np.float64)
    rng = np.random.default_rng(seed)

    emb = rng.normal(size=(batch_size, 768))
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    gt_coords = rng.uniform(-1.0, 1.0, size=(batch_size, 18, 2))
    gt_vis = (rng.random((batch_size, 18)) < 0.7).astype(np.float64)
    gt_vis[:, 0] = 1.0  # keep both visibility classes in every sample
    gt_vis[:, 1] = 0.0
    dropout_seed = int(rng.integers(2 ** 32))

    def objective(tape=None) -> LossBreakdown:
        # reseeding per evaluation keeps dropout masks identical, so finite
        # differences probe the same realized network the tape differentiated
        outputs = model.apply(emb, "train", np.random.default_rng(dropout_seed),
                              tape=tape)
        return batch_losses(outputs, gt_coords, gt_vis, weights, ablation)

    tape = Tape()
    breakdown = objective(tape)
    model.zero_grads()
    tape.backward(breakdown.tensor)

    groups = {}
    for name, param in model.params.items():
        flat = param.data.reshape(-1)
        gflat = param.grad.reshape(-1)
        picks = [int(np.argmax(np.abs(gflat)))]
        picks += [int(i) for i in rng.integers(flat.size, size=samples_per_group)]
        picks = list(dict.fromkeys(picks))
        max_rel = 0.0
        for j in picks:
            saved = flat[j]
            flat[j] = saved + FD_STEP
            f_plus = objective().total
            flat[j] = saved - FD_STEP
            f_minus = objective().total
            flat[j] = saved
            fd = (f_plus - f_minus) / (2.0 * FD_STEP)
            analytic = gflat[j]
            rel = abs(analytic - fd) / max(abs(analytic), abs(fd), 1e-6)
            max_rel = max(max_rel, rel)
        groups[name] = {"max_rel_err": float(max_rel), "checked": len(picks),
                        "pass": bool(tolerance > 0 and max_rel <= tolerance)}
    return {
        "tolerance": tolerance,
        "step": FD_STEP,
        "batch_size": batch_size,
        "loss": breakdown.to_dict(),
        "pass": all(g["pass"] for g in groups.values()),
        "groups": groups,
    }


__all__ = [
    "TrainConfig", "AblationFlags", "FULL_MODEL", "SweepGrid", "Adam",
    "TrainingAborted", "train", "sweep", "ablate", "grad_check",
    "evaluate_split", "embedding_matrix", "batch_losses", "config_hash",
    "default_sweep_grid", "apply_factor", "ablation_preset", "flag_label",
]
