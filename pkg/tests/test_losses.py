"""Loss values against hand-derived cases and the brute-force oracles,
plus finite-difference gradient checks for every term."""

import math

import numpy as np
import pytest

import oracles
from textpose import diffcore as dc
from textpose import losses as L
from textpose.skeleton import COCO18, NUM_JOINTS

B_SIZES = (1, 2, 4, 8)


def rand_batch(rng, batch):
    pred = rng.uniform(-1.2, 1.2, size=(batch, NUM_JOINTS, 2))
    gt = rng.uniform(-1.0, 1.0, size=(batch, NUM_JOINTS, 2))
    vis = (rng.random((batch, NUM_JOINTS)) > 0.3).astype(float)
    return pred, gt, vis


def unit_rows(rng, batch, dim=16):
    x = rng.normal(size=(batch, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# frozen cases
# ---------------------------------------------------------------------------

def test_coord_identity_is_zero():
    rng = np.random.default_rng(0)
    gt = rng.uniform(-1, 1, size=(2, NUM_JOINTS, 2))
    vis = np.ones((2, NUM_JOINTS))
    assert L.coord_loss(gt, gt, vis).item() == 0.0


def test_coord_single_visible_joint():
    gt = np.zeros((1, NUM_JOINTS, 2))
    pred = np.zeros((1, NUM_JOINTS, 2))
    pred[0, 3] = [0.3, 0.4]
    vis = np.zeros((1, NUM_JOINTS))
    vis[0, 3] = 1.0
    # other joints carry error too, but the mask removes them
    pred[0, 5] = [7.0, 7.0]
    assert L.coord_loss(pred, gt, vis).item() == pytest.approx(0.25, rel=1e-7)


def test_coord_all_invisible_epsilon_guard():
    rng = np.random.default_rng(1)
    pred = rng.uniform(-1, 1, size=(1, NUM_JOINTS, 2))
    gt = rng.uniform(-1, 1, size=(1, NUM_JOINTS, 2))
    assert L.coord_loss(pred, gt, np.zeros((1, NUM_JOINTS))).item() == pytest.approx(0.0, abs=1e-12)


def test_vis_all_zero_logits_is_ln2():
    logits = np.zeros((1, NUM_JOINTS))
    vis = np.array([[1, 0] * 9], dtype=float)
    assert L.vis_loss(logits, vis).item() == pytest.approx(math.log(2.0), abs=1e-9)


def test_vis_ninety_percent_confidence():
    logits = np.full((1, NUM_JOINTS), math.log(9.0))  # sigmoid -> 0.9
    vis = np.ones((1, NUM_JOINTS))
    assert L.vis_loss(logits, vis).item() == pytest.approx(-math.log(0.9), abs=1e-9)


def test_vis_saturated_correct_predictions():
    vis = np.array([[1, 0] * 9], dtype=float)
    logits = np.where(vis == 1.0, 40.0, -40.0)
    assert L.vis_loss(logits, vis).item() <= 1e-6


def test_vis_rejects_non_binary_truth():
    with pytest.raises(ValueError, match="binary"):
        L.vis_loss(np.zeros((1, NUM_JOINTS)), np.full((1, NUM_JOINTS), 0.5))


def test_inv_all_visible_is_zero():
    rng = np.random.default_rng(2)
    pred = rng.uniform(-1, 1, size=(1, NUM_JOINTS, 2))
    assert L.inv_loss(pred, np.ones((1, NUM_JOINTS))).item() == pytest.approx(0.0, abs=1e-12)


def test_inv_single_hidden_joint():
    pred = np.zeros((1, NUM_JOINTS, 2))
    pred[0, 7] = [0.6, -0.8]
    vis = np.ones((1, NUM_JOINTS))
    vis[0, 7] = 0.0
    assert L.inv_loss(pred, vis).item() == pytest.approx(1.0, rel=1e-7)


def test_inv_hidden_at_origin_is_zero():
    pred = np.zeros((1, NUM_JOINTS, 2))
    vis = np.ones((1, NUM_JOINTS))
    vis[0, 7] = 0.0
    assert L.inv_loss(pred, vis).item() == pytest.approx(0.0, abs=1e-12)


def test_skel_identity_and_translation_invariance():
    rng = np.random.default_rng(3)
    gt = rng.uniform(-0.8, 0.8, size=(2, NUM_JOINTS, 2))
    assert L.skel_loss(gt, gt).item() == pytest.approx(0.0, abs=1e-12)
    shifted = gt + np.array([0.3, 0.1])
    assert L.skel_loss(shifted, gt).item() == pytest.approx(0.0, abs=1e-12)


def test_skel_doubled_pose():
    rng = np.random.default_rng(4)
    gt = rng.uniform(-0.8, 0.8, size=(1, NUM_JOINTS, 2))
    i_idx, j_idx = COCO18.index_arrays()
    lengths = np.linalg.norm(gt[0, i_idx] - gt[0, j_idx], axis=1)
    expect = float((lengths ** 2).mean())
    assert L.skel_loss(2.0 * gt, gt).item() == pytest.approx(expect, rel=1e-9)


def test_contrastive_single_pair_is_zero():
    f = unit_rows(np.random.default_rng(5), 1)
    assert L.contrastive_loss(f, f, tau=0.07).item() == pytest.approx(0.0, abs=1e-12)


def test_contrastive_orthonormal_pairs():
    f = np.eye(2)
    got = L.contrastive_loss(f, f, tau=0.07).item()
    expect = math.log(1.0 + math.exp(-1.0 / 0.07))
    assert got == pytest.approx(expect, rel=1e-6)
    assert got == pytest.approx(6.2e-7, rel=0.02)


def test_contrastive_identical_rows_ln2():
    f = np.tile(unit_rows(np.random.default_rng(6), 1), (2, 1))
    assert L.contrastive_loss(f, f, tau=0.07).item() == pytest.approx(math.log(2.0), abs=1e-9)


def test_contrastive_rejects_unnormalized():
    f = unit_rows(np.random.default_rng(7), 3)
    with pytest.raises(ValueError, match="unit-normalized"):
        L.contrastive_loss(2.0 * f, f)


def test_total_weighted_sum():
    bd = L.total_loss(0.25, 0.693147, 1.0, 0.04, 0.693147)
    assert bd.total == pytest.approx(1.5164617, abs=1e-7)
    assert bd.coord == 0.25
    zero = L.total_loss(0, 0, 0, 0, 0)
    assert zero.total == 0.0


def test_default_weights_match_stated_values():
    w = L.LossWeights()
    assert (w.lambda_inv, w.lambda_skel, w.lambda_con) == (0.50, 0.10, 0.10)
    assert w.tau == 0.07
    assert w.epsilon == 1e-8


def test_breakdown_consistency_property():
    rng = np.random.default_rng(8)
    for _ in range(20):
        parts = rng.uniform(0, 2, size=5)
        w = L.LossWeights(lambda_inv=rng.uniform(0, 1), lambda_skel=rng.uniform(0, 1),
                          lambda_con=rng.uniform(0, 1))
        bd = L.total_loss(*parts, weights=w)
        manual = (bd.coord + bd.vis + w.lambda_inv * bd.inv
                  + w.lambda_skel * bd.skel + w.lambda_con * bd.con)
        assert abs(bd.total - manual) < 1e-9


# ---------------------------------------------------------------------------
# oracle agreement
# ---------------------------------------------------------------------------

def test_losses_match_oracles_randomized():
    rng = np.random.default_rng(42)
    for trial in range(25):
        batch = B_SIZES[trial % len(B_SIZES)]
        pred, gt, vis = rand_batch(rng, batch)
        if trial % 5 == 0:
            vis[:] = 1.0
        if trial % 7 == 0:
            vis[:] = 0.0
        logits = rng.normal(size=(batch, NUM_JOINTS)) * 3.0
        bvis = (rng.random((batch, NUM_JOINTS)) > 0.5).astype(float)
        ft, fp = unit_rows(rng, batch), unit_rows(rng, batch)
        tau = rng.uniform(0.05, 0.2)
        assert L.coord_loss(pred, gt, vis).item() == pytest.approx(
            oracles.loss_coord(pred, gt, vis), abs=1e-10)
        assert L.vis_loss(logits, bvis).item() == pytest.approx(
            oracles.loss_vis(logits, bvis), abs=1e-10)
        assert L.inv_loss(pred, vis).item() == pytest.approx(
            oracles.loss_inv(pred, vis), abs=1e-10)
        assert L.skel_loss(pred, gt).item() == pytest.approx(
            oracles.loss_skel(pred, gt, COCO18.edges), abs=1e-10)
        assert L.contrastive_loss(ft, fp, tau).item() == pytest.approx(
            oracles.loss_con(ft, fp, tau), abs=1e-10)


def test_contrastive_rotation_invariance():
    rng = np.random.default_rng(9)
    ft, fp = unit_rows(rng, 5, dim=8), unit_rows(rng, 5, dim=8)
    q, _ = np.linalg.qr(rng.normal(size=(8, 8)))
    base = L.contrastive_loss(ft, fp).item()
    rotated = L.contrastive_loss(ft @ q, fp @ q).item()
    assert rotated == pytest.approx(base, abs=1e-9)


def test_coord_scales_quadratically():
    rng = np.random.default_rng(10)
    pred, gt, vis = rand_batch(rng, 3)
    vis[:] = 1.0
    base = L.coord_loss(pred, gt, vis).item()
    scaled = L.coord_loss(2.5 * pred, 2.5 * gt, vis).item()
    assert scaled == pytest.approx(2.5 ** 2 * base, rel=1e-9)


def test_losses_are_non_negative():
    rng = np.random.default_rng(11)
    for _ in range(10):
        pred, gt, vis = rand_batch(rng, 4)
        logits = rng.normal(size=(4, NUM_JOINTS))
        bvis = (rng.random((4, NUM_JOINTS)) > 0.5).astype(float)
        ft, fp = unit_rows(rng, 4), unit_rows(rng, 4)
        assert L.coord_loss(pred, gt, vis).item() >= 0.0
        assert L.vis_loss(logits, bvis).item() >= 0.0
        assert L.inv_loss(pred, vis).item() >= 0.0
        assert L.skel_loss(pred, gt).item() >= 0.0
        assert L.contrastive_loss(ft, fp).item() >= -1e-12


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------

def fd_check(build, x, rtol=1e-4, atol=1e-7, step=1e-5, samples=25, seed=0):
    """Compare tape gradient of scalar build() against FD on sampled coords."""
    tape = dc.Tape()
    t = dc.Tensor(x, tape=tape)
    out = build(t)
    tape.backward(out)
    rng = np.random.default_rng(seed)
    flat = x.reshape(-1)
    idxs = rng.choice(flat.size, size=min(samples, flat.size), replace=False)
    for idx in idxs:
        orig = flat[idx]
        flat[idx] = orig + step
        fp = build(dc.Tensor(x)).item()
        flat[idx] = orig - step
        fm = build(dc.Tensor(x)).item()
        flat[idx] = orig
        fd = (fp - fm) / (2 * step)
        got = t.grad.reshape(-1)[idx]
        assert got == pytest.approx(fd, rel=rtol, abs=atol)


def test_grad_coord_loss():
    rng = np.random.default_rng(20)
    pred, gt, vis = rand_batch(rng, 2)
    fd_check(lambda t: L.coord_loss(t, gt, vis), pred)


def test_grad_vis_loss():
    rng = np.random.default_rng(21)
    logits = rng.normal(size=(2, NUM_JOINTS)) * 2.0
    bvis = (rng.random((2, NUM_JOINTS)) > 0.5).astype(float)
    fd_check(lambda t: L.vis_loss(t, bvis), logits)


def test_grad_inv_loss():
    rng = np.random.default_rng(22)
    pred, _, vis = rand_batch(rng, 2)
    fd_check(lambda t: L.inv_loss(t, vis), pred)


def test_grad_skel_loss():
    rng = np.random.default_rng(23)
    pred, gt, _ = rand_batch(rng, 2)
    fd_check(lambda t: L.skel_loss(t, gt), pred)


def test_grad_skel_zero_subgradient_on_coincident_joints():
    gt = np.random.default_rng(24).uniform(-0.5, 0.5, size=(1, NUM_JOINTS, 2))
    pred = np.zeros((1, NUM_JOINTS, 2))  # every edge's endpoints coincide
    tape = dc.Tape()
    t = dc.Tensor(pred, tape=tape)
    out = L.skel_loss(t, gt)
    tape.backward(out)
    assert np.isfinite(t.grad).all()
    np.testing.assert_array_equal(t.grad, 0.0)


def test_grad_contrastive_both_sides():
    rng = np.random.default_rng(25)
    ft, fp = unit_rows(rng, 4), unit_rows(rng, 4)
    fd_check(lambda t: L.contrastive_loss(t, fp), ft, samples=20)
    fd_check(lambda t: L.contrastive_loss(ft, t), fp, samples=20)


def test_grad_total_flows_to_all_parts():
    rng = np.random.default_rng(26)
    pred, gt, vis = rand_batch(rng, 2)

    def build(t):
        c = L.coord_loss(t, gt, vis)
        i = L.inv_loss(t, vis)
        s = L.skel_loss(t, gt)
        return L.total_loss(c, 0.0, i, s, 0.0).tensor

    fd_check(build, pred)
