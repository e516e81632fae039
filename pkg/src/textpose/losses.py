"""The five training losses and their weighted sum.

Coordinate regression on visible joints, visibility BCE, an off-image
penalty for invisible joints, bone-length consistency over the skeleton
edges, and a bidirectional InfoNCE term between caption and pose
projections. All accept either plain arrays or taped tensors for the
predicted quantities; ground truth is always constant.

Per-sample formulas are averaged over the batch so magnitudes are
batch-size independent; the contrastive term carries its own 1/2B.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .skeleton import COCO18, NUM_JOINTS, Pose, SkeletonTopology

PROB_CLAMP = 1e-7
NORM_TOLERANCE = 1e-3  # allowed deviation of projection row norms from 1


@dataclass(frozen=True)
class LossWeights:
    """Weighting coefficients and temperature for the total objective."""

    lambda_inv: float = 0.50
    lambda_skel: float = 0.10
    lambda_con: float = 0.10
    tau: float = 0.07
    epsilon: float = 1e-8

    def validate(self) -> None:
        if min(self.lambda_inv, self.lambda_skel, self.lambda_con) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")


@dataclass(frozen=True)
class LossBreakdown:
    """Scalar values of each term plus the weighted total; when built from
    taped tensors, `tensor` holds the differentiable total."""

    coord: float
    vis: float
    inv: float
    skel: float
    con: float
    total: float
    tensor: Tensor | None = field(default=None, compare=False, repr=False)

    def to_dict(self) -> dict:
        return {"coord": self.coord, "vis": self.vis, "inv": self.inv,
                "skel": self.skel, "con": self.con, "total": self.total}


def _pred3(pred) -> Tensor:
    """Coerce predicted coordinates to a [B, 18, 2] tensor."""
    if isinstance(pred, Pose):
        pred = pred.joints
    if not isinstance(pred, Tensor):
        pred = Tensor(np.asarray(pred, dtype=np.float64))
    if pred.data.ndim == 2:
        pred = dc.reshape(pred, (1,) + pred.data.shape)
    if pred.data.ndim != 3 or pred.data.shape[1:] != (NUM_JOINTS, 2):
        raise dc.ShapeError(f"expected [B, {NUM_JOINTS}, 2] coordinates, "
                            f"got {pred.data.shape}")
    return pred


def _const3(gt) -> np.ndarray:
    if isinstance(gt, Pose):
        gt = gt.joints
    gt = np.asarray(gt.data if isinstance(gt, Tensor) else gt, dtype=np.float64)
    if gt.ndim == 2:
        gt = gt[None]
    if gt.ndim != 3 or gt.shape[1:] != (NUM_JOINTS, 2):
        raise dc.ShapeError(f"expected [B, {NUM_JOINTS}, 2] ground truth, got {gt.shape}")
    return gt


def _vis2(vis, batch: int) -> np.ndarray:
    if hasattr(vis, "v"):
        vis = vis.v
    elif isinstance(vis, Tensor):
        vis = vis.data
    values = np.asarray(vis, dtype=np.float64)
    if values.ndim == 1:
        values = values[None]
    if values.shape != (batch, NUM_JOINTS):
        raise dc.ShapeError(f"expected [{batch}, {NUM_JOINTS}] visibility, "
                            f"got {values.shape}")
    return values


def coord_loss(pred, gt, mask, eps: float = 1e-8) -> Tensor:
    """Masked squared coordinate error, normalized by the visible count."""
    pred = _pred3(pred)
    gt = _const3(gt)
    mask = _vis2(mask, pred.data.shape[0])
    diff = dc.sub(pred, gt)
    per_joint = dc.sum_(dc.mul(diff, diff), axis=2)
    per_sample = dc.sum_(dc.mul(per_joint, mask), axis=1)
    inv_denom = 1.0 / (mask.sum(axis=1) + eps)
    return dc.mean_(dc.mul(per_sample, inv_denom))


def vis_loss(vis_logits, gt) -> Tensor:
    """Mean binary cross-entropy over the 18 joints, probabilities clamped
    to [1e-7, 1-1e-7] before the logs."""
    if not isinstance(vis_logits, Tensor):
        vis_logits = Tensor(np.asarray(vis_logits, dtype=np.float64))
    if vis_logits.data.ndim == 1:
        vis_logits = dc.reshape(vis_logits, (1,) + vis_logits.data.shape)
    v = _vis2(gt, vis_logits.data.shape[0])
    if not np.isin(v, (0.0, 1.0)).all():
        raise ValueError("ground-truth visibility must be binary")
    p = dc.clip(dc.sigmoid(vis_logits), PROB_CLAMP, 1.0 - PROB_CLAMP)
    ll = dc.add(dc.mul(dc.log(p), v), dc.mul(dc.log(dc.sub(1.0, p)), 1.0 - v))
    return dc.mean_(dc.mul(ll, -1.0))


def inv_loss(pred, gt_vis, eps: float = 1e-8) -> Tensor:
    """Pulls invisible joints' predictions toward the origin."""
    pred = _pred3(pred)
    v = _vis2(gt_vis, pred.data.shape[0])
    hidden = 1.0 - v
    sq = dc.sum_(dc.mul(pred, pred), axis=2)
    per_sample = dc.sum_(dc.mul(sq, hidden), axis=1)
    inv_denom = 1.0 / (hidden.sum(axis=1) + eps)
    return dc.mean_(dc.mul(per_sample, inv_denom))


def skel_loss(pred, gt, topo: SkeletonTopology = COCO18) -> Tensor:
    """Mean squared bone-length discrepancy over the topology's edges."""
    if len(topo.edges) == 0:
        raise ValueError("skeleton topology has no edges")
    pred = _pred3(pred)
    gt = _const3(gt)
    i_idx, j_idx = topo.index_arrays()
    seg = dc.sub(dc.take(pred, i_idx, axis=1), dc.take(pred, j_idx, axis=1))
    pred_len = dc.eucnorm(seg, axis=2)
    gt_len = np.linalg.norm(gt[:, i_idx] - gt[:, j_idx], axis=2)
    d = dc.sub(pred_len, gt_len)
    return dc.mean_(dc.mul(d, d))


def contrastive_loss(f_text, f_pose, tau: float = 0.07) -> Tensor:
    """Bidirectional InfoNCE over the batch's caption/pose projections."""
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if not isinstance(f_text, Tensor):
        f_text = Tensor(np.asarray(f_text, dtype=np.float64))
    if not isinstance(f_pose, Tensor):
        f_pose = Tensor(np.asarray(f_pose, dtype=np.float64))
    if f_text.data.shape != f_pose.data.shape or f_text.data.ndim != 2:
        raise dc.ShapeError(f"projection batches must share a [B, d] shape, got "
                            f"{f_text.data.shape} and {f_pose.data.shape}")
    batch = f_text.data.shape[0]
    if batch < 1:
        raise dc.ShapeError("empty projection batch")
    for label, t in (("f_text", f_text), ("f_pose", f_pose)):
        norms = np.linalg.norm(t.data, axis=1)
        worst = float(np.abs(norms - 1.0).max())
        if worst > NORM_TOLERANCE:
            raise ValueError(f"{label} rows must be unit-normalized "
                             f"(worst deviation {worst:.2e})")
    s = dc.mul(dc.matmul(f_text, dc.transpose(f_pose, (1, 0))), 1.0 / tau)
    diag_idx = np.arange(batch) * batch + np.arange(batch)
    diag = dc.take(dc.reshape(s, (batch * batch,)), diag_idx, axis=0)
    row = dc.sub(dc.logsumexp(s, axis=1), diag)
    col = dc.sub(dc.logsumexp(s, axis=0), diag)
    return dc.mul(dc.mean_(dc.add(row, col)), 0.5)


def total_loss(coord, vis, inv, skel, con,
               weights: LossWeights = LossWeights()) -> LossBreakdown:
    """Weighted sum of the five parts; accepts tensors or plain scalars."""
    weights.validate()

    def as_tensor(x):
        return x if isinstance(x, Tensor) else Tensor(np.asarray(float(x)))

    parts = {"coord": as_tensor(coord), "vis": as_tensor(vis),
             "inv": as_tensor(inv), "skel": as_tensor(skel), "con": as_tensor(con)}
    total = dc.add(parts["coord"], parts["vis"])
    total = dc.add(total, dc.mul(parts["inv"], weights.lambda_inv))
    total = dc.add(total, dc.mul(parts["skel"], weights.lambda_skel))
    total = dc.add(total, dc.mul(parts["con"], weights.lambda_con))
    return LossBreakdown(
        coord=float(parts["coord"].data), vis=float(parts["vis"].data),
        inv=float(parts["inv"].data), skel=float(parts["skel"].data),
        con=float(parts["con"].data), total=float(total.data), tensor=total)


__all__ = ["LossWeights", "LossBreakdown", "coord_loss", "vis_loss", "inv_loss",
           "skel_loss", "contrastive_loss", "total_loss", "PROB_CLAMP"]
