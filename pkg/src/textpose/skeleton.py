"""Core pose data types: COCO-18 joint ordering, edge topology, coordinate
normalization and geometric helpers.

Coordinates are stored normalized to [-1, 1] with the origin at the image
center, +x right, +y down. Invisible joints in ground truth are parked at
(0, 0) and carry no coordinate supervision.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

NUM_JOINTS = 18

JOINT_NAMES = (
    "nose", "neck",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_hip", "r_knee", "r_ankle",
    "l_hip", "l_knee", "l_ankle",
    "r_eye", "l_eye", "r_ear", "l_ear",
)

# Standard OpenPose-18 limb set, 17 undirected edges.
COCO18_EDGES = (
    (0, 1),
    (1, 2), (2, 3), (3, 4),
    (1, 5), (5, 6), (6, 7),
    (1, 8), (8, 9), (9, 10),
    (1, 11), (11, 12), (12, 13),
    (0, 14), (14, 16),
    (0, 15), (15, 17),
)


class Keypoint2D(NamedTuple):
    """One normalized keypoint, image-center origin."""

    x: float
    y: float


def _frozen_array(values, dtype=np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.flags.writeable = False
    return arr


# Canonical neutral pose (standing, arms down, facing forward) in normalized
# image-center coordinates, COCO/OpenPose joint order. Serves as the
# zero-displacement reference wherever a fixed anatomical layout is needed.
REST_POSE = _frozen_array([
    (0.00, -0.75),   # nose
    (0.00, -0.50),   # neck
    (-0.20, -0.45),  # r_shoulder
    (-0.23, -0.22),  # r_elbow
    (-0.25, 0.01),   # r_wrist
    (0.20, -0.45),   # l_shoulder
    (0.23, -0.22),   # l_elbow
    (0.25, 0.01),    # l_wrist
    (-0.12, 0.00),   # r_hip
    (-0.13, 0.35),   # r_knee
    (-0.14, 0.70),   # r_ankle
    (0.12, 0.00),    # l_hip
    (0.13, 0.35),    # l_knee
    (0.14, 0.70),    # l_ankle
    (-0.06, -0.80),  # r_eye
    (0.06, -0.80),   # l_eye
    (-0.11, -0.77),  # r_ear
    (0.11, -0.77),   # l_ear
])


@dataclass(frozen=True)
class Pose:
    """Array of joints in COCO/OpenPose order, shape (n, 2).

    Valid poses have exactly NUM_JOINTS joints; construction is permissive
    about the joint count so that validate_sample can report the violation
    rather than raising.
    """

    joints: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.joints, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ValueError(f"pose joints must have shape (n, 2), got {arr.shape}")
        object.__setattr__(self, "joints", _frozen_array(arr))

    @property
    def n_joints(self) -> int:
        return self.joints.shape[0]

    def translated(self, dx: float, dy: float) -> "Pose":
        return Pose(self.joints + np.array([dx, dy]))


@dataclass(frozen=True)
class VisibilityVector:
    """Per-joint visibility: {0,1} for ground truth, [0,1] for predictions."""

    v: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.v, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError(f"visibility must be 1-d, got shape {arr.shape}")
        object.__setattr__(self, "v", _frozen_array(arr))

    def is_binary(self) -> bool:
        return bool(np.all((self.v == 0.0) | (self.v == 1.0)))


@dataclass(frozen=True)
class SkeletonTopology:
    """Undirected edge set over joint indices."""

    edges: tuple

    def __post_init__(self):
        edges = tuple((int(i), int(j)) for i, j in self.edges)
        seen = set()
        for i, j in edges:
            if not (0 <= i < NUM_JOINTS and 0 <= j < NUM_JOINTS):
                raise ValueError(f"edge ({i},{j}) references joint outside [0,{NUM_JOINTS - 1}]")
            if i == j:
                raise ValueError(f"self-edge ({i},{j})")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ValueError(f"duplicate undirected edge ({i},{j})")
            seen.add(key)
        object.__setattr__(self, "edges", edges)

    def __len__(self) -> int:
        return len(self.edges)

    def index_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        e = np.asarray(self.edges, dtype=np.int64)
        return e[:, 0], e[:, 1]


COCO18 = SkeletonTopology(COCO18_EDGES)


@dataclass(frozen=True)
class PoseSample:
    """One caption paired with its annotated pose and visibility flags."""

    id: str
    caption: str
    pose: Pose
    visibility: VisibilityVector
    source_width: int = 256
    source_height: int = 256


def normalize_coords(px: Sequence[float], width: float, height: float) -> Keypoint2D:
    """Map pixel coordinates to [-1, 1] with the origin at the image center."""
    if width <= 0 or height <= 0:
        raise ValueError(f"image dimensions must be positive, got {width}x{height}")
    x, y = float(px[0]), float(px[1])
    if not (np.isfinite(x) and np.isfinite(y)):
        raise ValueError(f"non-finite pixel coordinate ({x}, {y})")
    return Keypoint2D(2.0 * x / width - 1.0, 2.0 * y / height - 1.0)


def denormalize_coords(kp: Sequence[float], width: float, height: float) -> tuple[float, float]:
    """Exact inverse of normalize_coords."""
    if width <= 0 or height <= 0:
        raise ValueError(f"image dimensions must be positive, got {width}x{height}")
    x, y = float(kp[0]), float(kp[1])
    return ((x + 1.0) * width / 2.0, (y + 1.0) * height / 2.0)


def edge_lengths(pose: Pose | np.ndarray, topo: SkeletonTopology = COCO18) -> np.ndarray:
    """Euclidean length of every topology edge, in normalized units."""
    joints = pose.joints if isinstance(pose, Pose) else np.asarray(pose, dtype=np.float64)
    ei, ej = topo.index_arrays()
    if joints.shape[0] <= max(int(ei.max()), int(ej.max())):
        raise ValueError(
            f"pose has {joints.shape[0]} joints but topology references joint "
            f"{max(int(ei.max()), int(ej.max()))}"
        )
    diff = joints[ei] - joints[ej]
    return np.sqrt((diff ** 2).sum(axis=1))


@dataclass
class ValidationReport:
    """Structured list of invariant violations; empty means the sample is valid."""

    sample_id: str
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, message: str) -> None:
        self.violations.append(message)


def validate_sample(sample: PoseSample) -> ValidationReport:
    """Check every PoseSample invariant, reporting all violations without raising."""
    report = ValidationReport(sample_id=sample.id)
    if not sample.caption or not sample.caption.strip():
        report.add("empty caption")
    if sample.source_width <= 0 or sample.source_height <= 0:
        report.add(f"non-positive source dimensions {sample.source_width}x{sample.source_height}")

    joints = sample.pose.joints
    if joints.shape[0] != NUM_JOINTS:
        report.add(f"joint count != {NUM_JOINTS} (got {joints.shape[0]})")
    if not np.all(np.isfinite(joints)):
        report.add("non-finite joint coordinate")
    else:
        bad = np.where(np.abs(joints) > 1.0)[0]
        for idx in np.unique(bad):
            report.add(f"joint {idx} coordinate outside [-1, 1]")

    v = sample.visibility.v
    if v.shape[0] != NUM_JOINTS:
        report.add(f"visibility length != {NUM_JOINTS} (got {v.shape[0]})")
    if not sample.visibility.is_binary():
        report.add("visibility not binary")
    return report
