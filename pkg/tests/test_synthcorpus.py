"""Template geometry, caption grammar invertibility, and corpus generation."""

import numpy as np
import pytest

from textpose import synthcorpus as SC
from textpose.skeleton import NUM_JOINTS, validate_sample


def test_template_count_and_uniqueness():
    ts = SC.all_templates()
    assert len(ts) == 576
    assert len(set(ts)) == 576


def test_template_validation():
    with pytest.raises(ValueError, match="stance"):
        SC.PoseTemplate(stance="flying").validate()
    with pytest.raises(ValueError, match="left_arm"):
        SC.PoseTemplate(left_arm="akimbo").validate()


def test_oracle_default_template():
    pose, vis = SC.oracle_pose(SC.DEFAULT_TEMPLATE)
    assert vis.v.sum() == NUM_JOINTS  # everything visible
    np.testing.assert_allclose(pose.joints[0], [0.0, -0.75])  # nose
    np.testing.assert_allclose(pose.joints[1], [0.0, -0.50])  # neck
    # bilaterally symmetric: left joints mirror right joints in x
    for r, l in ((2, 5), (3, 6), (4, 7), (8, 11), (9, 12), (10, 13),
                 (14, 15), (16, 17)):
        assert pose.joints[r][0] == pytest.approx(-pose.joints[l][0])
        assert pose.joints[r][1] == pytest.approx(pose.joints[l][1])


def test_oracle_default_matches_rest_pose():
    from textpose.skeleton import REST_POSE
    pose, vis = SC.oracle_pose(SC.DEFAULT_TEMPLATE)
    np.testing.assert_allclose(pose.joints, REST_POSE, atol=1e-12)
    assert vis.v.all()


def test_oracle_deterministic():
    t = SC.PoseTemplate("walking", "raised", "on-hip", "tilt-left", "turned-right")
    p1, v1 = SC.oracle_pose(t)
    p2, v2 = SC.oracle_pose(t)
    np.testing.assert_array_equal(p1.joints, p2.joints)
    np.testing.assert_array_equal(v1.v, v2.v)


def test_head_turn_hides_far_ear_and_eye():
    pose, vis = SC.oracle_pose(SC.PoseTemplate(head="turned-left"))
    assert vis.v[16] == 0.0 and vis.v[14] == 0.0  # right ear and eye
    np.testing.assert_array_equal(pose.joints[[14, 16]], 0.0)
    assert vis.v[15] == 1.0 and vis.v[17] == 1.0  # near side stays visible
    pose, vis = SC.oracle_pose(SC.PoseTemplate(head="turned-right"))
    assert vis.v[17] == 0.0 and vis.v[15] == 0.0  # left ear and eye
    np.testing.assert_array_equal(pose.joints[[15, 17]], 0.0)
    assert vis.v[14] == 1.0 and vis.v[16] == 1.0


def test_every_template_stays_in_bounds():
    for t in SC.all_templates():
        pose, vis = SC.oracle_pose(t)
        assert np.abs(pose.joints).max() <= 1.0, t
        assert np.isin(vis.v, (0.0, 1.0)).all()


def test_stances_produce_distinct_legs():
    standing = SC.oracle_pose(SC.PoseTemplate(stance="standing"))[0].joints
    sitting = SC.oracle_pose(SC.PoseTemplate(stance="sitting"))[0].joints
    walking = SC.oracle_pose(SC.PoseTemplate(stance="walking"))[0].joints
    legs = [9, 10, 12, 13]
    assert not np.allclose(standing[legs], sitting[legs])
    assert not np.allclose(standing[legs], walking[legs])
    # walking is asymmetric, standing is not
    assert not np.allclose(walking[9], walking[12] * [-1, 1])


def test_torso_tilt_moves_the_head_sideways():
    upright = SC.oracle_pose(SC.DEFAULT_TEMPLATE)[0].joints
    left = SC.oracle_pose(SC.PoseTemplate(torso="tilt-left"))[0].joints
    right = SC.oracle_pose(SC.PoseTemplate(torso="tilt-right"))[0].joints
    assert left[0][0] > upright[0][0] > right[0][0]
    np.testing.assert_array_equal(left[8], upright[8])  # hips do not move


def test_lean_forward_compresses_upper_body():
    upright = SC.oracle_pose(SC.DEFAULT_TEMPLATE)[0].joints
    lean = SC.oracle_pose(SC.PoseTemplate(torso="lean-forward"))[0].joints
    assert lean[0][1] > upright[0][1]  # nose drops toward the pelvis line
    assert lean[0][0] == upright[0][0]


# ---------------------------------------------------------------------------
# grammar
# ---------------------------------------------------------------------------

def test_default_caption_fixed_string():
    assert SC.caption_of(SC.DEFAULT_TEMPLATE, 0) == "a person standing still facing forward"


def test_caption_names_every_non_default_attribute():
    t = SC.PoseTemplate("standing", "raised", "down", "lean-forward", "forward")
    got = SC.caption_of(t, 0)
    assert got == "a person standing, with the left arm raised, torso leaning forward"


def test_caption_variants_differ_but_share_the_pose():
    t = SC.PoseTemplate("sitting", "on-hip", "extended", "tilt-right", "turned-left")
    caps = {SC.caption_of(t, v) for v in range(SC.PARAPHRASE_COUNT)}
    assert len(caps) == SC.PARAPHRASE_COUNT
    poses = [SC.oracle_pose(SC.parse_caption(c))[0].joints for c in caps]
    for p in poses[1:]:
        np.testing.assert_array_equal(poses[0], p)


def test_grammar_round_trip_every_template_and_variant():
    for t in SC.all_templates():
        for v in range(SC.PARAPHRASE_COUNT):
            assert SC.parse_caption(SC.caption_of(t, v)) == t


def test_grammar_round_trip_with_per_clause_variants():
    rng = np.random.default_rng(3)
    templates = SC.all_templates()
    for i in rng.integers(len(templates), size=200):
        t = templates[int(i)]
        variants = rng.integers(SC.PARAPHRASE_COUNT, size=5)
        assert SC.parse_caption(SC.caption_of(t, variants)) == t


def test_per_clause_variants_multiply_the_surface_forms():
    t = SC.PoseTemplate("sitting", "on-hip", "extended", "tilt-right", "turned-left")
    caps = {SC.caption_of(t, (a, b, c, d, e))
            for a in range(3) for b in range(3) for c in range(3)
            for d in range(3) for e in range(3)}
    assert len(caps) == 3 ** 5  # five clauses, three forms each


def test_captions_injective_across_templates():
    seen = {}
    for t in SC.all_templates():
        for v in range(SC.PARAPHRASE_COUNT):
            c = SC.caption_of(t, v)
            assert seen.setdefault(c, t) == t, f"caption collision: {c!r}"
    assert len(seen) == 576 * SC.PARAPHRASE_COUNT


def test_token_multisets_injective_across_templates():
    # The hashed embedding ignores word order, so captions of different
    # templates must differ as token *bags*, not merely as strings.
    from collections import Counter
    from textpose.textenc import tokenize
    seen = {}
    for t in SC.all_templates():
        for v in range(SC.PARAPHRASE_COUNT):
            c = SC.caption_of(t, v)
            bag = frozenset(Counter(tokenize(c)).items())
            assert seen.setdefault(bag, t) == t, f"bag collision: {c!r}"


def test_grammar_vocabulary_has_no_hash_bucket_clashes():
    # Two vocabulary words landing in the same signed embedding bucket would
    # be indistinguishable downstream even with distinct bags.
    from textpose.textenc import EMBED_DIM, fnv1a_64, tokenize
    vocab = set()
    for t in SC.all_templates():
        for v in range(SC.PARAPHRASE_COUNT):
            vocab.update(tokenize(SC.caption_of(t, v)))
    buckets = {}
    for tok in sorted(vocab):
        h = fnv1a_64(tok.encode())
        slot = (h % EMBED_DIM, h >> 63)
        assert buckets.setdefault(slot, tok) == tok, \
            f"bucket clash: {tok!r} vs {buckets[slot]!r}"


def test_parse_rejects_garbage():
    with pytest.raises(ValueError):
        SC.parse_caption("two cats on a mat")
    with pytest.raises(ValueError):
        SC.parse_caption("a person standing, doing a handstand")
    with pytest.raises(ValueError, match="variant"):
        SC.caption_of(SC.DEFAULT_TEMPLATE, 7)


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def records(corpus):
    from textpose.data import sample_to_record
    return [sample_to_record(s) for split in ("train", "val", "test")
            for s in corpus.split(split)]


def test_generate_counts_and_ids():
    spec = SC.SynthSpec(seed=1, n_samples=100)
    corpus = SC.generate_corpus(spec)
    assert len(corpus.train) == 80
    assert len(corpus.val) == 10
    assert len(corpus.test) == 10
    ids = [s.id for split in corpus.splits().values() for s in split]
    assert len(set(ids)) == 100
    assert ids[0] == "synth-000000"


def test_generate_deterministic():
    spec = SC.SynthSpec(seed=7, n_samples=120)
    a, b = SC.generate_corpus(spec), SC.generate_corpus(spec)
    assert records(a) == records(b)
    c = SC.generate_corpus(SC.SynthSpec(seed=8, n_samples=120))
    assert records(a) != records(c)


def test_generate_noise_free_equals_oracle():
    spec = SC.SynthSpec(seed=3, n_samples=100, jitter_sigma=0.0, occlusion_rate=0.0)
    corpus = SC.generate_corpus(spec)
    for s in corpus.train[:30]:
        base, vis = SC.oracle_pose(SC.parse_caption(s.caption))
        np.testing.assert_array_equal(s.pose.joints, base.joints)
        np.testing.assert_array_equal(s.visibility.v, vis.v)


def test_generated_samples_all_valid():
    corpus = SC.generate_corpus(SC.SynthSpec(seed=5, n_samples=200))
    for split in corpus.splits().values():
        for s in split:
            assert validate_sample(s).ok
            assert np.abs(s.pose.joints).max() <= 1.0


def test_template_splits_disjoint():
    corpus = SC.generate_corpus(SC.SynthSpec(seed=11, n_samples=500))
    by_split = {name: {SC.parse_caption(s.caption) for s in split}
                for name, split in corpus.splits().items()}
    assert not (by_split["train"] & by_split["val"])
    assert not (by_split["train"] & by_split["test"])
    assert not (by_split["val"] & by_split["test"])
    captions = {name: {s.caption for s in split}
                for name, split in corpus.splits().items()}
    assert not (captions["train"] & captions["val"])
    assert not (captions["train"] & captions["test"])


def test_occlusion_rate_hides_joints():
    no_occ = SC.generate_corpus(SC.SynthSpec(seed=2, n_samples=400, occlusion_rate=0.0))
    occ = SC.generate_corpus(SC.SynthSpec(seed=2, n_samples=400, occlusion_rate=0.2))
    vis_frac = lambda c: np.mean([s.visibility.v.mean() for s in c.train])
    assert vis_frac(occ) < vis_frac(no_occ) - 0.1
    for s in occ.train[:50]:  # hidden joints are parked
        parked = s.pose.joints[s.visibility.v == 0.0]
        if parked.size:
            np.testing.assert_array_equal(parked, 0.0)


def test_occlusion_marginal_rate_is_preserved_per_joint():
    """Region dropout must keep each joint's marginal hide rate at
    occlusion_rate; baseline-invisible joints are excluded from the count."""
    rate = 0.25
    corpus = SC.generate_corpus(SC.SynthSpec(seed=11, n_samples=4000,
                                             occlusion_rate=rate))
    eligible = np.zeros(NUM_JOINTS)
    hidden = np.zeros(NUM_JOINTS)
    for s in corpus.train:
        _, base_vis = SC.oracle_pose(SC.parse_caption(s.caption))
        m = base_vis.v == 1.0
        eligible += m
        hidden += m & (s.visibility.v == 0.0)
    np.testing.assert_allclose(hidden / eligible, rate, atol=0.04)


def test_occlusions_hide_whole_regions():
    corpus = SC.generate_corpus(SC.SynthSpec(seed=7, n_samples=500,
                                             occlusion_rate=0.3))
    for s in corpus.train:
        _, base_vis = SC.oracle_pose(SC.parse_caption(s.caption))
        extra = (base_vis.v == 1.0) & (s.visibility.v == 0.0)
        for region in SC.OCCLUSION_REGIONS:
            in_region = extra[list(region)]
            base_in_region = base_vis.v[list(region)] == 1.0
            # a region is either untouched or dropped wholesale
            assert (~in_region).all() or (in_region == base_in_region).all()


def test_spec_validation():
    with pytest.raises(ValueError, match="n_samples"):
        SC.generate_corpus(SC.SynthSpec(n_samples=50))
    with pytest.raises(ValueError, match="occlusion_rate"):
        SC.SynthSpec(occlusion_rate=0.6).validate()
    with pytest.raises(ValueError, match="jitter"):
        SC.SynthSpec(jitter_sigma=-0.1).validate()


def test_jitter_magnitude_matches_rayleigh_mean():
    """Per-joint deviation from oracle ~ |N(0, s^2 I)|, mean s*sqrt(pi/2)."""
    sigma = 0.01
    corpus = SC.generate_corpus(SC.SynthSpec(seed=9, n_samples=10_000,
                                             jitter_sigma=sigma, occlusion_rate=0.0))
    devs = []
    for s in corpus.train:
        base, vis = SC.oracle_pose(SC.parse_caption(s.caption))
        visible = vis.v == 1.0
        devs.append(np.linalg.norm(s.pose.joints[visible] - base.joints[visible], axis=1))
    mean_dev = float(np.concatenate(devs).mean())
    expect = sigma * np.sqrt(np.pi / 2.0)
    assert mean_dev == pytest.approx(expect, rel=0.05)
