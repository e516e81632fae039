"""Caption-conditioned pose generator.

Pipeline: 768-d caption embedding -> two-layer GELU MLP -> learnable
positional vector -> pre-norm transformer encoder -> four heads (pose
coordinates, visibility logits, text projection, pose projection). The
encoder sees a single-token sequence by default; `query_tokens` prepends
learned tokens and mean-pools the outputs.

Structural ablations (skip the MLP, skip the encoder, drop the visibility
head, drop the contrastive projections' use) are wired here because they
change which parameters exist.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np
from scipy.special import expit

from . import diffcore as dc
from .diffcore import ConfigError, Parameter, Tensor
from .skeleton import NUM_JOINTS, REST_POSE, Pose
from .textenc import EMBED_DIM

MLP_HIDDEN = 1024
COORD_CLAMP = 1.5
# The pose head predicts a displacement from the canonical rest pose and
# reads the pooled features at quarter scale. Both constants condition the
# head for short optimization runs: the anchor spares the head from pushing
# its outputs out to the coordinate means (a bias moving at learning-rate
# speed needs thousands of steps to travel that far), and the damped read
# keeps the randomly-initialized head's output spread small relative to the
# target spread while the weight magnitudes that compensate stay within a
# few thousand optimizer steps' reach.
HEAD_READ_SCALE = 0.25
# sigmoid(40) rounds to 1.0 in float32: the "always visible" stand-in logit
# when the visibility head is ablated away.
PINNED_VIS_LOGIT = 40.0


@dataclass(frozen=True)
class PoseGenConfig:
    """Architecture hyperparameters (the swept ones plus seed)."""

    hidden_dim: int = 512
    num_layers: int = 6
    num_heads: int = 8
    dropout_p: float = 0.10
    proj_dim: int = 256
    ffn_mult: int = 4
    query_tokens: int = 0
    seed: int = 0

    def validate(self) -> None:
        if self.hidden_dim < 1 or self.num_layers < 0 or self.num_heads < 1:
            raise ConfigError("hidden_dim/num_layers/num_heads must be positive")
        if self.hidden_dim % self.num_heads != 0:
            raise ConfigError(
                f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.proj_dim < 8:
            raise ConfigError(f"proj_dim must be >= 8, got {self.proj_dim}")
        if self.ffn_mult < 1:
            raise ConfigError(f"ffn_mult must be >= 1, got {self.ffn_mult}")
        if self.query_tokens < 0:
            raise ConfigError(f"query_tokens must be >= 0, got {self.query_tokens}")


@dataclass(frozen=True)
class AblationFlags:
    """Structural on/off switches; all on = the full model."""

    use_contrastive: bool = True
    use_mlp: bool = True
    use_transformer: bool = True
    use_vis_head: bool = True

    def validate(self) -> None:
        if not (self.use_contrastive or self.use_mlp
                or self.use_transformer or self.use_vis_head):
            raise ConfigError("at least one model component must stay enabled")


FULL_MODEL = AblationFlags()


@dataclass(frozen=True)
class ModelOutput:
    """One sample's prediction: normalized coordinates, visibility logits,
    and the two unit-norm projection vectors."""

    coords: Pose
    vis_logits: np.ndarray
    f_text: np.ndarray
    f_pose: np.ndarray

    @property
    def vis_probs(self) -> np.ndarray:
        return expit(self.vis_logits)


def _uniform_init(rng, fan_in, fan_out, shape, dtype):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class PoseGenModel:
    """Parameter container plus the forward computation over the tape."""

    def __init__(self, config: PoseGenConfig, ablation: AblationFlags,
                 params: dict[str, Parameter]):
        self.config = config
        self.ablation = ablation
        self.params = params

    def parameters(self) -> dict[str, Parameter]:
        return self.params

    def param(self, name: str) -> Parameter:
        return self.params[name]

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    @property
    def seq_len(self) -> int:
        return 1 + self.config.query_tokens

    def apply(self, embeddings: np.ndarray, mode: str = "eval",
              rng: np.random.Generator | None = None,
              tape: dc.Tape | None = None) -> dict:
        """Run the network on a [B, 768] batch, returning taped tensors
        (coords [B,18,2], vis_logits [B,18], f_text/f_pose [B,proj_dim])."""
        if mode not in ("train", "eval"):
            raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
        emb = np.asarray(embeddings)
        if emb.ndim != 2 or emb.shape[1] != EMBED_DIM:
            raise dc.ShapeError(f"expected [B, {EMBED_DIM}] embeddings, got {emb.shape}")
        if emb.shape[0] < 1:
            raise dc.ShapeError("empty batch")
        if mode == "train" and self.config.dropout_p > 0.0 and rng is None:
            raise ConfigError("train mode with dropout needs an rng")
        cfg, flags, p = self.config, self.ablation, self.params
        batch = emb.shape[0]
        dtype = next(iter(p.values())).data.dtype
        x_in = Tensor(emb.astype(dtype, copy=False), tape=tape)

        def stage(name, fn):
            try:
                return fn()
            except dc.NumericsError as err:
                raise dc.NumericsError(f"{name}: {err}") from None

        if flags.use_mlp:
            h = stage("mlp.fc1", lambda: dc.affine(x_in, p["mlp.fc1.W"], p["mlp.fc1.b"]))
            h = stage("mlp.gelu", lambda: dc.gelu(h))
            h = stage("mlp.fc2", lambda: dc.affine(h, p["mlp.fc2.W"], p["mlp.fc2.b"]))
        else:
            h = stage("mlp.direct", lambda: dc.affine(x_in, p["mlp.direct.W"], p["mlp.direct.b"]))
        h = dc.dropout(h, cfg.dropout_p, mode, rng)

        # assemble the token sequence: [B, S, hidden], token 0 is the caption
        h = dc.reshape(h, (batch, 1, cfg.hidden_dim))
        if cfg.query_tokens > 0:
            q = dc.broadcast_to(dc.reshape(p["query"], (1, cfg.query_tokens, cfg.hidden_dim)),
                                (batch, cfg.query_tokens, cfg.hidden_dim))
            h = dc.concat([h, q], axis=1)
        h = stage("pos", lambda: dc.add(h, p["pos"]))

        if flags.use_transformer:
            for i in range(cfg.num_layers):
                pre = f"encoder.{i}"
                hh = h
                a = stage(f"{pre}.ln1", lambda: dc.layer_norm(
                    hh, p[f"{pre}.ln1.gain"], p[f"{pre}.ln1.bias"]))
                a = stage(f"{pre}.attn", lambda: dc.multi_head_attention(
                    a, num_heads=cfg.num_heads,
                    wq=p[f"{pre}.attn.wq"], bq=p[f"{pre}.attn.bq"],
                    wk=p[f"{pre}.attn.wk"], bk=p[f"{pre}.attn.bk"],
                    wv=p[f"{pre}.attn.wv"], bv=p[f"{pre}.attn.bv"],
                    wo=p[f"{pre}.attn.wo"], bo=p[f"{pre}.attn.bo"]))
                h = dc.add(hh, dc.dropout(a, cfg.dropout_p, mode, rng))
                hh2 = h
                f = stage(f"{pre}.ln2", lambda: dc.layer_norm(
                    hh2, p[f"{pre}.ln2.gain"], p[f"{pre}.ln2.bias"]))
                f = stage(f"{pre}.ffn", lambda: dc.affine(
                    dc.gelu(dc.affine(f, p[f"{pre}.ffn.fc1.W"], p[f"{pre}.ffn.fc1.b"])),
                    p[f"{pre}.ffn.fc2.W"], p[f"{pre}.ffn.fc2.b"]))
                h = dc.add(h, dc.dropout(f, cfg.dropout_p, mode, rng))
            # the residual stream is un-normalized under the pre-norm layout;
            # the closing layer norm keeps the heads' input at unit scale
            hf = h
            h = stage("encoder.ln_f", lambda: dc.layer_norm(
                hf, p["encoder.ln_f.gain"], p["encoder.ln_f.bias"]))

        if cfg.query_tokens > 0:
            x_trans = dc.mean_(h, axis=1)
        else:
            x_trans = dc.reshape(h, (batch, cfg.hidden_dim))

        head_in = dc.mul(x_trans, dtype.type(HEAD_READ_SCALE))
        coords = stage("pose_head", lambda: dc.affine(
            head_in, p["pose_head.W"], p["pose_head.b"]))
        coords = dc.add(coords, REST_POSE.reshape(-1).astype(dtype))
        coords = dc.clip(dc.reshape(coords, (batch, NUM_JOINTS, 2)),
                         -COORD_CLAMP, COORD_CLAMP)

        if flags.use_vis_head:
            vis_logits = stage("vis_head", lambda: dc.affine(
                x_trans, p["vis_head.W"], p["vis_head.b"]))
        else:
            vis_logits = Tensor(np.full((batch, NUM_JOINTS), PINNED_VIS_LOGIT, dtype=dtype))

        f_text = stage("text_proj", lambda: dc.l2_normalize(dc.layer_norm(
            dc.affine(x_in, p["text_proj.W"], p["text_proj.b"]),
            p["text_proj.ln.gain"], p["text_proj.ln.bias"])))
        f_pose = stage("pose_proj", lambda: dc.l2_normalize(dc.layer_norm(
            dc.affine(x_trans, p["pose_proj.W"], p["pose_proj.b"]),
            p["pose_proj.ln.gain"], p["pose_proj.ln.bias"])))

        return {"coords": coords, "vis_logits": vis_logits,
                "f_text": f_text, "f_pose": f_pose}


def init_model(config: PoseGenConfig, ablation: AblationFlags = FULL_MODEL,
               dtype=np.float32) -> PoseGenModel:
    """Build a model with scaled-uniform weights, zero biases, zero positional
    vector, and unit layer-norm gains; bit-deterministic given config.seed."""
    config.validate()
    ablation.validate()
    rng = np.random.default_rng(config.seed)
    h, pdim, m = config.hidden_dim, config.proj_dim, config.ffn_mult
    seq = 1 + config.query_tokens
    params: dict[str, Parameter] = {}

    def linear(prefix, fan_in, fan_out):
        params[f"{prefix}.W"] = Parameter(
            _uniform_init(rng, fan_in, fan_out, (fan_in, fan_out), dtype),
            name=f"{prefix}.W", dtype=dtype)
        params[f"{prefix}.b"] = Parameter(np.zeros(fan_out, dtype=dtype),
                                          name=f"{prefix}.b", dtype=dtype)

    def norm(prefix, dim):
        params[f"{prefix}.gain"] = Parameter(np.ones(dim, dtype=dtype),
                                             name=f"{prefix}.gain", dtype=dtype)
        params[f"{prefix}.bias"] = Parameter(np.zeros(dim, dtype=dtype),
                                             name=f"{prefix}.bias", dtype=dtype)

    if ablation.use_mlp:
        linear("mlp.fc1", EMBED_DIM, MLP_HIDDEN)
        linear("mlp.fc2", MLP_HIDDEN, h)
    else:
        linear("mlp.direct", EMBED_DIM, h)
    params["pos"] = Parameter(np.zeros((seq, h), dtype=dtype), name="pos", dtype=dtype)
    if config.query_tokens > 0:
        params["query"] = Parameter(
            _uniform_init(rng, h, h, (config.query_tokens, h), dtype),
            name="query", dtype=dtype)
    if ablation.use_transformer:
        for i in range(config.num_layers):
            pre = f"encoder.{i}"
            norm(f"{pre}.ln1", h)
            for w, b in (("wq", "bq"), ("wk", "bk"), ("wv", "bv"), ("wo", "bo")):
                params[f"{pre}.attn.{w}"] = Parameter(
                    _uniform_init(rng, h, h, (h, h), dtype),
                    name=f"{pre}.attn.{w}", dtype=dtype)
                params[f"{pre}.attn.{b}"] = Parameter(
                    np.zeros(h, dtype=dtype), name=f"{pre}.attn.{b}", dtype=dtype)
            norm(f"{pre}.ln2", h)
            linear(f"{pre}.ffn.fc1", h, m * h)
            linear(f"{pre}.ffn.fc2", m * h, h)
        norm("encoder.ln_f", h)
    linear("pose_head", h, NUM_JOINTS * 2)
    if ablation.use_vis_head:
        linear("vis_head", h, NUM_JOINTS)
    linear("text_proj", EMBED_DIM, pdim)
    norm("text_proj.ln", pdim)
    linear("pose_proj", h, pdim)
    norm("pose_proj.ln", pdim)
    return PoseGenModel(config, ablation, params)


def param_count(config: PoseGenConfig, ablation: AblationFlags = FULL_MODEL) -> int:
    """Closed-form parameter count; must equal the registry enumeration."""
    config.validate()
    h, pdim, m = config.hidden_dim, config.proj_dim, config.ffn_mult
    seq = 1 + config.query_tokens
    total = 0
    if ablation.use_mlp:
        total += EMBED_DIM * MLP_HIDDEN + MLP_HIDDEN + MLP_HIDDEN * h + h
    else:
        total += EMBED_DIM * h + h
    total += seq * h
    if config.query_tokens > 0:
        total += config.query_tokens * h
    if ablation.use_transformer:
        per_block = (2 * h                      # ln1
                     + 4 * (h * h + h)          # q, k, v, o projections
                     + 2 * h                    # ln2
                     + h * (m * h) + m * h      # ffn in
                     + (m * h) * h + h)         # ffn out
        total += config.num_layers * per_block + 2 * h  # blocks + closing norm
    total += h * (NUM_JOINTS * 2) + NUM_JOINTS * 2
    if ablation.use_vis_head:
        total += h * NUM_JOINTS + NUM_JOINTS
    total += EMBED_DIM * pdim + pdim + 2 * pdim
    total += h * pdim + pdim + 2 * pdim
    return total


def forward(model: PoseGenModel, e_c: np.ndarray, mode: str = "eval",
            rng: np.random.Generator | None = None) -> ModelOutput:
    """Single-sample inference; eval mode is deterministic."""
    e = np.asarray(e_c, dtype=np.float64)
    if e.shape != (EMBED_DIM,):
        raise dc.ShapeError(f"expected a {EMBED_DIM}-d embedding, got shape {e.shape}")
    return batch_forward(model, e[None, :], mode=mode, rng=rng)[0]


def batch_forward(model: PoseGenModel, embeddings, mode: str = "eval",
                  rng: np.random.Generator | None = None) -> list[ModelOutput]:
    """B independent forwards; in eval mode identical to per-sample calls."""
    emb = np.asarray(embeddings)
    if emb.ndim != 2 or emb.shape[0] < 1:
        raise dc.ShapeError(f"expected a non-empty [B, {EMBED_DIM}] batch, got {emb.shape}")
    out = model.apply(emb, mode=mode, rng=rng, tape=None)
    coords = out["coords"].data
    vis = out["vis_logits"].data
    f_text = out["f_text"].data
    f_pose = out["f_pose"].data
    return [ModelOutput(coords=Pose(coords[i]),
                        vis_logits=vis[i].copy(),
                        f_text=f_text[i].copy(),
                        f_pose=f_pose[i].copy())
            for i in range(emb.shape[0])]


# ---------------------------------------------------------------------------
# checkpointing: PGCK1 weights + JSON sidecar
# ---------------------------------------------------------------------------

def sidecar_path(path) -> str:
    return str(path) + ".json"


def save_model(model: PoseGenModel, path, extra: dict | None = None) -> None:
    """Write weights (PGCK1) and a JSON sidecar with config, ablation flags,
    and the coordinate-normalization contract."""
    dc.save_checkpoint(model.params, path)
    meta = {
        "format": "PGCK1",
        "config": asdict(model.config),
        "ablation": asdict(model.ablation),
        "normalization": {"coord_range": [-1.0, 1.0], "resolution": 256},
    }
    if extra:
        meta.update(extra)
    with open(sidecar_path(path), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path) -> PoseGenModel:
    """Rebuild a model from checkpoint + sidecar; shapes must match exactly."""
    with open(sidecar_path(path), encoding="utf-8") as fh:
        meta = json.load(fh)
    config = PoseGenConfig(**meta["config"])
    ablation = AblationFlags(**meta.get("ablation", {}))
    model = init_model(config, ablation)
    values = dc.load_checkpoint(path)
    expected = set(model.params)
    got = set(values)
    if expected != got:
        missing = sorted(expected - got)
        surplus = sorted(got - expected)
        raise ValueError(f"checkpoint parameter mismatch: missing {missing}, "
                         f"unexpected {surplus}")
    for name, param in model.params.items():
        if values[name].shape != param.data.shape:
            raise ValueError(f"shape mismatch for {name}: checkpoint "
                             f"{values[name].shape}, model {param.data.shape}")
        param.data = values[name].astype(param.data.dtype)
    return model


__all__ = [
    "PoseGenConfig", "AblationFlags", "FULL_MODEL", "ModelOutput", "PoseGenModel",
    "init_model", "param_count", "forward", "batch_forward",
    "save_model", "load_model", "sidecar_path", "COORD_CLAMP", "MLP_HIDDEN",
    "PINNED_VIS_LOGIT",
]
