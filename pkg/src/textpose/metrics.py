"""Evaluation metrics in pixel space: PCKh@alpha, PCK@fraction, MPJPE, and
visibility average precision, plus the report container they roll up into.

Localization metrics only count joints whose ground truth is visible;
invisible joints carry parked (0,0) coordinates that would corrupt errors.
PCKh normalizes by the ground-truth nose-neck distance, falling back to
0.1 x image side when either endpoint is invisible (flagged in the report).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .skeleton import JOINT_NAMES, NUM_JOINTS, denormalize_coords

HEAD_FALLBACK_FRAC = 0.1
NOSE, NECK = 0, 1


def _as_arrays(pred, gt, vis):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    vis = np.asarray(vis, dtype=np.float64)
    if pred.ndim == 2:
        pred, gt, vis = pred[None], gt[None], vis[None]
    if pred.shape != gt.shape or pred.shape[1:] != (NUM_JOINTS, 2):
        raise ValueError(f"prediction/truth shape mismatch: {pred.shape} vs {gt.shape}")
    if vis.shape != pred.shape[:2]:
        raise ValueError(f"visibility shape {vis.shape} does not match {pred.shape[:2]}")
    if not np.isin(vis, (0.0, 1.0)).all():
        raise ValueError("ground-truth visibility must be binary")
    return pred, gt, vis


def _sides(sides, n):
    arr = np.broadcast_to(np.asarray(sides, dtype=np.float64), (n,))
    if (arr <= 0).any():
        raise ValueError("image side must be positive")
    return arr


def _errors(pred, gt):
    return np.linalg.norm(pred - gt, axis=2)


def head_sizes(gt, vis, sides) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample nose-neck pixel distance; fallback 0.1 x side where either
    endpoint is invisible. Returns (sizes, fallback_mask)."""
    gt = np.asarray(gt, dtype=np.float64)
    vis = np.asarray(vis, dtype=np.float64)
    sides = _sides(sides, gt.shape[0])
    measurable = (vis[:, NOSE] == 1.0) & (vis[:, NECK] == 1.0)
    nose_neck = np.linalg.norm(gt[:, NOSE] - gt[:, NECK], axis=1)
    sizes = np.where(measurable, nose_neck, HEAD_FALLBACK_FRAC * sides)
    return sizes, ~measurable


def pckh(pred, gt, vis, alpha: float = 0.5, sides=256) -> float:
    """Fraction of visible joints within alpha x head size, pooled over samples."""
    pred, gt, vis = _as_arrays(pred, gt, vis)
    if vis.sum() == 0:
        raise ValueError("no visible joints to score")
    sizes, _ = head_sizes(gt, vis, sides)
    hits = (_errors(pred, gt) <= alpha * sizes[:, None]) & (vis == 1.0)
    return float(hits.sum() / vis.sum())


def pck_at(pred, gt, vis, frac: float, sides=256) -> float:
    """Fraction of visible joints within frac x image side (inclusive)."""
    pred, gt, vis = _as_arrays(pred, gt, vis)
    if vis.sum() == 0:
        raise ValueError("no visible joints to score")
    thresh = frac * _sides(sides, pred.shape[0])
    hits = (_errors(pred, gt) <= thresh[:, None]) & (vis == 1.0)
    return float(hits.sum() / vis.sum())


def mpjpe(pred, gt, vis) -> float:
    """Mean Euclidean pixel error over visible joints."""
    pred, gt, vis = _as_arrays(pred, gt, vis)
    if vis.sum() == 0:
        raise ValueError("no visible joints to score")
    err = _errors(pred, gt)
    return float((err * vis).sum() / vis.sum())


def visibility_map(pred_probs, gt_vis) -> float:
    """Average precision of visibility classification, all joints pooled.

    Tied scores enter the precision-recall curve as one group, so a constant
    score yields AP equal to the positive prevalence.
    """
    scores = np.asarray(pred_probs, dtype=np.float64).reshape(-1)
    labels = np.asarray(gt_vis, dtype=np.float64).reshape(-1)
    if scores.shape != labels.shape:
        raise ValueError(f"score/label count mismatch: {scores.shape} vs {labels.shape}")
    if not np.isin(labels, (0.0, 1.0)).all():
        raise ValueError("ground-truth visibility must be binary")
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == labels.size:
        raise ValueError("AP undefined: labels are all-positive or all-negative")
    order = np.argsort(-scores, kind="stable")
    y = labels[order]
    s = scores[order]
    tp = np.cumsum(y)
    fp = np.cumsum(1.0 - y)
    # group ties: keep only the last index of each distinct score run
    last = np.r_[s[1:] != s[:-1], True]
    tp, fp = tp[last], fp[last]
    recall = tp / n_pos
    precision = tp / (tp + fp)
    prev = np.r_[0.0, recall[:-1]]
    return float(((recall - prev) * precision).sum())


@dataclass(frozen=True)
class EvalReport:
    """Aggregate metrics over an evaluation split."""

    pckh_05: float
    pck_005: float
    pck_010: float
    mpjpe_px: float
    vis_map: float | None
    n_samples: int
    per_joint: dict = field(default_factory=dict)
    head_fallback_count: int = 0

    def __post_init__(self):
        for name in ("pckh_05", "pck_005", "pck_010"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.mpjpe_px < 0:
            raise ValueError(f"mpjpe_px must be non-negative, got {self.mpjpe_px}")
        if self.vis_map is not None and not 0.0 <= self.vis_map <= 1.0:
            raise ValueError(f"vis_map must lie in [0, 1], got {self.vis_map}")

    def to_dict(self) -> dict:
        return {"pckh_05": self.pckh_05, "pck_005": self.pck_005,
                "pck_010": self.pck_010, "mpjpe_px": self.mpjpe_px,
                "vis_map": self.vis_map, "n_samples": self.n_samples,
                "per_joint": self.per_joint,
                "head_fallback_count": self.head_fallback_count}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(pckh_05=d["pckh_05"], pck_005=d["pck_005"], pck_010=d["pck_010"],
                   mpjpe_px=d["mpjpe_px"], vis_map=d["vis_map"],
                   n_samples=d["n_samples"], per_joint=d.get("per_joint", {}),
                   head_fallback_count=d.get("head_fallback_count", 0))

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls.from_dict(json.loads(text))


def evaluate_outputs(outputs, samples) -> EvalReport:
    """Score model outputs against their samples, denormalizing each pose to
    its declared pixel resolution."""
    if len(outputs) != len(samples):
        raise ValueError(f"{len(outputs)} outputs for {len(samples)} samples")
    if not samples:
        raise ValueError("empty evaluation set")
    n = len(samples)
    pred = np.zeros((n, NUM_JOINTS, 2))
    gt = np.zeros((n, NUM_JOINTS, 2))
    vis = np.zeros((n, NUM_JOINTS))
    probs = np.zeros((n, NUM_JOINTS))
    sides = np.zeros(n)
    for k, (out, sample) in enumerate(zip(outputs, samples)):
        w, h = sample.source_width, sample.source_height
        for i in range(NUM_JOINTS):
            pred[k, i] = denormalize_coords(out.coords.joints[i], w, h)
            gt[k, i] = denormalize_coords(sample.pose.joints[i], w, h)
        vis[k] = sample.visibility.v
        probs[k] = out.vis_probs
        sides[k] = max(w, h)
    _, fallback = head_sizes(gt, vis, sides)
    try:
        ap = visibility_map(probs, vis)
    except ValueError:
        ap = None

    err = _errors(pred, gt)
    sizes, _ = head_sizes(gt, vis, sides)
    per_joint = {}
    joint_pckh = []
    joint_mpjpe = []
    for i in range(NUM_JOINTS):
        m = vis[:, i] == 1.0
        if m.any():
            joint_pckh.append(float(((err[m, i] <= 0.5 * sizes[m])).mean()))
            joint_mpjpe.append(float(err[m, i].mean()))
        else:
            joint_pckh.append(None)
            joint_mpjpe.append(None)
    per_joint = {"names": list(JOINT_NAMES), "pckh_05": joint_pckh,
                 "mpjpe_px": joint_mpjpe}

    return EvalReport(
        pckh_05=pckh(pred, gt, vis, sides=sides),
        pck_005=pck_at(pred, gt, vis, 0.05, sides=sides),
        pck_010=pck_at(pred, gt, vis, 0.10, sides=sides),
        mpjpe_px=mpjpe(pred, gt, vis),
        vis_map=ap,
        n_samples=n,
        per_joint=per_joint,
        head_fallback_count=int(fallback.sum()))


__all__ = ["EvalReport", "pckh", "pck_at", "mpjpe", "visibility_map",
           "head_sizes", "evaluate_outputs"]
