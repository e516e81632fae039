"""Deterministic synthetic caption->pose corpus.

576 pose templates (3 stances x 4 left-arm x 4 right-arm x 4 torso x 3 head
attitudes), each with an exact jitter-free oracle pose and a small invertible
caption grammar (3 paraphrases per clause, each attribute value anchored by a
shared content word so paraphrases of the same pose stay close under the
bag-of-tokens embedding). Corpus generation draws templates uniformly, adds
Gaussian jitter to visible joints, applies random extra occlusions, and splits
80/10/10 at the template level so val/test captions describe attribute
combinations never seen in training.

Coordinates are normalized to [-1, 1] with y growing downward.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass

import numpy as np

from .data import SPLIT_NAMES, Corpus
from .skeleton import NUM_JOINTS, Pose, PoseSample, VisibilityVector

STANCES = ("standing", "sitting", "walking")
ARM_POSES = ("down", "raised", "extended", "on-hip")
TORSO_POSES = ("upright", "tilt-left", "tilt-right", "lean-forward")
HEAD_POSES = ("forward", "turned-left", "turned-right")

PARAPHRASE_COUNT = 3
RESOLUTION = 256

TILT_DEGREES = 12.0
LEAN_Y_SCALE = 0.72
# Arm offsets inherit this fraction of the torso transform. Below 1.0 the
# attribute effects stay mostly additive across template slots, which keeps
# the text->pose map learnable at desk scale while leaving a genuine
# torso x arm interaction for the encoder to model.
ARM_COUPLING = 0.7
# The figure is centered on the pelvis at the image center. Keeping every
# joint close to the origin matters for training: the invisible-joint loss
# pulls predictions toward the origin whenever a joint drops out, and the
# size of the bias that pull can induce grows with distance from the origin.
PELVIS = np.array([0.0, 0.0])
# joints that ride on the torso transform directly (arms follow their
# shoulders instead, with offsets transformed at ARM_COUPLING strength)
TORSO_CORE = (0, 1, 2, 5, 14, 15, 16, 17)

# Occluders in photographs are contiguous objects (furniture, other people,
# frame crops), so extra occlusions hide whole body regions rather than
# independent joints. Each region drops out with probability occlusion_rate,
# which keeps the per-joint marginal at exactly occlusion_rate while making
# multi-joint dropout the typical case, as in real annotations.
OCCLUSION_REGIONS = (
    (0, 1, 14, 15, 16, 17),   # head and neck
    (2, 3, 4),                # right arm
    (5, 6, 7),                # left arm
    (8, 9, 10),               # right leg
    (11, 12, 13),             # left leg
)


@dataclass(frozen=True)
class PoseTemplate:
    stance: str = "standing"
    left_arm: str = "down"
    right_arm: str = "down"
    torso: str = "upright"
    head: str = "forward"

    def validate(self) -> None:
        checks = ((self.stance, STANCES, "stance"),
                  (self.left_arm, ARM_POSES, "left_arm"),
                  (self.right_arm, ARM_POSES, "right_arm"),
                  (self.torso, TORSO_POSES, "torso"),
                  (self.head, HEAD_POSES, "head"))
        for value, allowed, name in checks:
            if value not in allowed:
                raise ValueError(f"{name} must be one of {allowed}, got {value!r}")


DEFAULT_TEMPLATE = PoseTemplate()


def all_templates() -> tuple:
    """All 576 attribute combinations in a fixed enumeration order."""
    return tuple(PoseTemplate(s, la, ra, t, h)
                 for s, la, ra, t, h in itertools.product(
                     STANCES, ARM_POSES, ARM_POSES, TORSO_POSES, HEAD_POSES))


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------

# legs per stance: (r_knee, r_ankle, l_knee, l_ankle)
_LEGS = {
    "standing": ((-0.13, 0.35), (-0.14, 0.70), (0.13, 0.35), (0.14, 0.70)),
    "sitting": ((-0.30, 0.10), (-0.32, 0.45), (0.30, 0.10), (0.32, 0.45)),
    "walking": ((-0.20, 0.30), (-0.26, 0.63), (0.08, 0.37), (0.16, 0.71)),
}

# arm geometry as (elbow offset from shoulder, wrist offset from elbow),
# x components multiplied by the side sign (+1 left, -1 right)
_ARMS = {
    "down": ((0.03, 0.23), (0.02, 0.23)),
    "raised": ((0.10, -0.18), (0.06, -0.24)),
    "extended": ((0.22, 0.00), (0.22, 0.00)),
    "on-hip": ((0.14, 0.10), (-0.20, 0.32)),  # wrist folds back onto the hip
}

HEAD_TURN_SHIFT = 0.05


def _torso_transform(torso: str) -> tuple[float, float]:
    """Rotation angle (radians, positive tilts left) and y scale about the pelvis."""
    if torso == "tilt-left":
        return np.deg2rad(TILT_DEGREES), 1.0
    if torso == "tilt-right":
        return -np.deg2rad(TILT_DEGREES), 1.0
    if torso == "lean-forward":
        return 0.0, LEAN_Y_SCALE
    return 0.0, 1.0


def _rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def oracle_pose(template: PoseTemplate) -> tuple[Pose, VisibilityVector]:
    """Jitter-free canonical pose; self-occluded joints invisible at origin."""
    template.validate()
    j = np.zeros((NUM_JOINTS, 2))
    vis = np.ones(NUM_JOINTS)

    j[0] = (0.0, -0.75)                       # nose
    j[1] = (0.0, -0.50)                       # neck
    j[2], j[5] = (-0.20, -0.45), (0.20, -0.45)    # shoulders
    j[8], j[11] = (-0.12, 0.0), (0.12, 0.0)       # hips
    j[14], j[15] = (-0.06, -0.80), (0.06, -0.80)  # eyes
    j[16], j[17] = (-0.11, -0.77), (0.11, -0.77)  # ears

    j[9], j[10], j[12], j[13] = _LEGS[template.stance]

    if template.head == "turned-left":
        j[[0, 14, 15], 0] += HEAD_TURN_SHIFT
        j[17, 0] += 0.02
        vis[[14, 16]] = 0.0  # far (right) eye and ear hidden behind the head
    elif template.head == "turned-right":
        j[[0, 14, 15], 0] -= HEAD_TURN_SHIFT
        j[16, 0] -= 0.02
        vis[[15, 17]] = 0.0

    theta, y_scale = _torso_transform(template.torso)
    core = np.array(TORSO_CORE)
    rel = j[core] - PELVIS
    rel = rel @ _rotation(theta).T
    rel[:, 1] *= y_scale
    j[core] = PELVIS + rel

    arm_rot = _rotation(ARM_COUPLING * theta)
    arm_y = 1.0 + ARM_COUPLING * (y_scale - 1.0)
    for arm, sign, elbow_i, wrist_i, shoulder_i in (
            (template.right_arm, -1.0, 3, 4, 2),
            (template.left_arm, 1.0, 6, 7, 5)):
        elbow_off, wrist_off = _ARMS[arm]
        for joint, anchor, off in ((elbow_i, shoulder_i, elbow_off),
                                   (wrist_i, elbow_i, wrist_off)):
            delta = arm_rot @ np.array([sign * off[0], off[1] * arm_y])
            j[joint] = j[anchor] + delta

    j[vis == 0.0] = 0.0
    return Pose(j), VisibilityVector(vis)


# ---------------------------------------------------------------------------
# caption grammar
# ---------------------------------------------------------------------------

STANCE_PHRASES = {
    "standing": ("standing", "standing up", "in a standing pose"),
    "sitting": ("sitting", "sitting down", "in a seated pose"),
    "walking": ("walking", "mid stride", "in a walking pose"),
}
# The caption embedding discards word order, so two captions with the same
# token multiset are indistinguishable downstream.  Each clause family
# therefore uses its own content vocabulary: swapping attribute values or
# sides between clauses always changes the bag of tokens, never just their
# order.  Arm clauses say "left"/"right", torso says "leftward"/"rightward",
# and the left/right arm tables share no content words.
#
# Within one attribute value, all three paraphrases share a distinctive
# anchor word (as the stance table already does with "standing"/"sitting"),
# mirroring how human caption writers reuse the salient attribute word.
# Under the bag-of-tokens embedding this keeps paraphrases of the same pose
# close together and distinct poses apart, instead of scattering paraphrases
# as far from each other as from genuinely different poses.
LEFT_ARM_PHRASES = {
    "raised": ("with the left arm raised",
               "the left arm raised high",
               "holding the left arm raised"),
    "extended": ("with the left arm extended to the side",
                 "the left arm extended straight out",
                 "holding the left arm extended"),
    "on-hip": ("with the left hand on the hip",
               "the left hand resting on the hip",
               "left hand planted on the hip"),
}
RIGHT_ARM_PHRASES = {
    "raised": ("with the right arm lifted",
               "the right arm lifted upward",
               "holding the right arm lifted"),
    "extended": ("with the right arm outstretched",
                 "the right arm outstretched level",
                 "holding the right arm outstretched"),
    "on-hip": ("with the right hand against the hip",
               "the right hand propped on the hip",
               "right hand braced on the hip"),
}
TORSO_PHRASES = {
    "tilt-left": ("torso tilted leftward",
                  "leaning the upper body leftward",
                  "upper body tipped leftward"),
    "tilt-right": ("torso tilted rightward",
                   "leaning the upper body rightward",
                   "upper body tipped rightward"),
    "lean-forward": ("torso leaning forward",
                     "bent forward at the waist",
                     "upper body pitched forward"),
}
HEAD_PHRASES = {
    "turned-left": ("head turned to the left",
                    "looking to the left",
                    "gazing left"),
    "turned-right": ("head turned to the right",
                     "looking to the right",
                     "gazing right"),
}
DEFAULT_CAPTIONS = ("a person standing still facing forward",
                    "a person standing and facing forward",
                    "a person at rest in a neutral standing pose")

_PREFIX = "a person "


def _stance_lookup():
    return {phrase: stance for stance, phrases in STANCE_PHRASES.items()
            for phrase in phrases}


def _clause_lookup():
    table = {}
    clause_tables = (("left_arm", LEFT_ARM_PHRASES), ("right_arm", RIGHT_ARM_PHRASES),
                     ("torso", TORSO_PHRASES), ("head", HEAD_PHRASES))
    for attr, phrases_by_value in clause_tables:
        for value, phrases in phrases_by_value.items():
            for phrase in phrases:
                table[phrase] = (attr, value)
    return table


_STANCES_BY_PHRASE = _stance_lookup()
_CLAUSES = _clause_lookup()


def caption_of(template: PoseTemplate, variant) -> str:
    """English caption naming every non-default attribute; injective across
    templates for any paraphrase choice.

    `variant` is either a single index applied to every clause or a sequence
    of five per-clause indices (stance, left arm, right arm, torso, head).
    Independent per-clause choices give each template dozens of surface
    forms, so a sampled corpus behaves like real caption data, where exact
    duplicate strings are rare.
    """
    template.validate()
    if isinstance(variant, (int, np.integer)):
        variants = (int(variant),) * 5
    else:
        variants = tuple(int(v) for v in variant)
        if len(variants) != 5:
            raise ValueError(f"variant must be one index or a sequence of "
                             f"five, got {len(variants)}")
    for v in variants:
        if not 0 <= v < PARAPHRASE_COUNT:
            raise ValueError(f"variant must be in [0, {PARAPHRASE_COUNT}), got {v}")
    if template == DEFAULT_TEMPLATE:
        return DEFAULT_CAPTIONS[variants[0]]
    parts = [_PREFIX + STANCE_PHRASES[template.stance][variants[0]]]
    if template.left_arm != "down":
        parts.append(LEFT_ARM_PHRASES[template.left_arm][variants[1]])
    if template.right_arm != "down":
        parts.append(RIGHT_ARM_PHRASES[template.right_arm][variants[2]])
    if template.torso != "upright":
        parts.append(TORSO_PHRASES[template.torso][variants[3]])
    if template.head != "forward":
        parts.append(HEAD_PHRASES[template.head][variants[4]])
    return ", ".join(parts)


def parse_caption(caption: str) -> PoseTemplate:
    """Exact inverse of caption_of over the grammar's output."""
    text = " ".join(caption.strip().lower().split())
    if text in DEFAULT_CAPTIONS:
        return DEFAULT_TEMPLATE
    clauses = [c.strip() for c in text.split(",")]
    lead = clauses[0]
    if not lead.startswith(_PREFIX):
        raise ValueError(f"caption must start with {_PREFIX!r}: {caption!r}")
    stance_phrase = lead[len(_PREFIX):]
    if stance_phrase not in _STANCES_BY_PHRASE:
        raise ValueError(f"unrecognized stance phrase {stance_phrase!r}")
    fields = {"stance": _STANCES_BY_PHRASE[stance_phrase], "left_arm": "down",
              "right_arm": "down", "torso": "upright", "head": "forward"}
    for clause in clauses[1:]:
        if clause not in _CLAUSES:
            raise ValueError(f"unrecognized clause {clause!r}")
        attr, value = _CLAUSES[clause]
        fields[attr] = value
    return PoseTemplate(**fields)


# ---------------------------------------------------------------------------
# corpus generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    n_samples: int = 1000
    jitter_sigma: float = 0.01
    occlusion_rate: float = 0.05
    caption_paraphrase_count: int = PARAPHRASE_COUNT

    def validate(self) -> None:
        if self.n_samples < 100:
            raise ValueError(f"n_samples must be at least 100, got {self.n_samples}")
        if self.jitter_sigma < 0:
            raise ValueError(f"jitter_sigma must be >= 0, got {self.jitter_sigma}")
        if not 0.0 <= self.occlusion_rate < 0.5:
            raise ValueError(f"occlusion_rate must lie in [0, 0.5), "
                             f"got {self.occlusion_rate}")
        if not 1 <= self.caption_paraphrase_count <= PARAPHRASE_COUNT:
            raise ValueError(f"caption_paraphrase_count must lie in "
                             f"[1, {PARAPHRASE_COUNT}]")


def template_split(templates, rng) -> dict:
    """Disjoint 80/10/10 partition of the template list."""
    perm = rng.permutation(len(templates))
    n_train = int(0.8 * len(templates))
    n_val = int(0.1 * len(templates))
    return {"train": [templates[i] for i in perm[:n_train]],
            "val": [templates[i] for i in perm[n_train:n_train + n_val]],
            "test": [templates[i] for i in perm[n_train + n_val:]]}


def generate_corpus(spec: SynthSpec) -> Corpus:
    """Reproducible corpus: one sequential rng drives every random choice."""
    spec.validate()
    templates = all_templates()
    rng = np.random.default_rng(spec.seed)
    by_split = template_split(templates, rng)
    counts = {"train": int(0.8 * spec.n_samples), "val": int(0.1 * spec.n_samples)}
    counts["test"] = spec.n_samples - counts["train"] - counts["val"]

    corpus = Corpus(meta={
        "generator": "synthetic-grammar-v2",
        "spec": asdict(spec),
        "resolution": RESOLUTION,
        "template_counts": {name: len(by_split[name]) for name in SPLIT_NAMES},
    })
    serial = 0
    for name in SPLIT_NAMES:
        pool = by_split[name]
        samples = []
        for _ in range(counts[name]):
            template = pool[int(rng.integers(len(pool)))]
            variant = int(rng.integers(spec.caption_paraphrase_count))
            base, vis = oracle_pose(template)
            joints = base.joints.copy()
            v = vis.v.copy()
            noise = rng.normal(0.0, spec.jitter_sigma, size=(NUM_JOINTS, 2))
            visible = v == 1.0
            joints[visible] += noise[visible]
            np.clip(joints, -1.0, 1.0, out=joints)
            draws = rng.random(len(OCCLUSION_REGIONS))
            newly_hidden = np.zeros(NUM_JOINTS, dtype=bool)
            for region, draw in zip(OCCLUSION_REGIONS, draws):
                if draw < spec.occlusion_rate:
                    newly_hidden[list(region)] = True
            newly_hidden &= visible
            v[newly_hidden] = 0.0
            joints[newly_hidden] = 0.0
            samples.append(PoseSample(
                id=f"synth-{serial:06d}", caption=caption_of(template, variant),
                pose=Pose(joints), visibility=VisibilityVector(v),
                source_width=RESOLUTION, source_height=RESOLUTION))
            serial += 1
        setattr(corpus, name, samples)
    return corpus


__all__ = ["PoseTemplate", "SynthSpec", "STANCES", "ARM_POSES", "TORSO_POSES",
           "HEAD_POSES", "PARAPHRASE_COUNT", "DEFAULT_TEMPLATE", "DEFAULT_CAPTIONS",
           "all_templates", "oracle_pose", "caption_of", "parse_caption",
           "template_split", "generate_corpus", "RESOLUTION"]
