"""Training loop, sweep/ablation harnesses, and the gradient checker."""

import dataclasses
import json

import numpy as np
import pytest

from textpose import diffcore as dc
from textpose import trainer as tr
from textpose.data import Corpus, content_digest
from textpose.diffcore import ConfigError, Parameter, Tape
from textpose.losses import LossWeights, coord_loss, skel_loss
from textpose.model import (AblationFlags, PoseGenConfig, init_model,
                            load_model)
from textpose.synthcorpus import SynthSpec, generate_corpus
from textpose.textenc import EMBED_DIM, EmbeddingTable
from textpose.trainer import (Adam, SweepGrid, TrainConfig, TrainingAborted,
                              ablate, ablation_preset, apply_factor,
                              config_hash, default_sweep_grid, embedding_matrix,
                              evaluate_split, flag_label, grad_check, sweep,
                              train)

TOY_MODEL = PoseGenConfig(hidden_dim=32, num_layers=1, num_heads=2,
                          dropout_p=0.0, proj_dim=16, seed=3)
TOY_TRAIN = TrainConfig(epochs=2, batch_size=32, model=TOY_MODEL, seed=7)


@pytest.fixture(scope="module")
def corpus():
    return generate_corpus(SynthSpec(seed=5, n_samples=120))


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def test_config_validation_rejects_bad_fields():
    with pytest.raises(ConfigError, match="batch_size"):
        TrainConfig(batch_size=0).validate()
    with pytest.raises(ConfigError, match="learning_rate"):
        TrainConfig(learning_rate=-1e-4).validate()
    with pytest.raises(ConfigError, match="eval_every"):
        TrainConfig(eval_every=0).validate()
    with pytest.raises(ConfigError, match="betas"):
        TrainConfig(adam_beta1=1.0).validate()
    with pytest.raises(ConfigError, match="epochs"):
        TrainConfig(epochs=-1).validate()
    with pytest.raises(ConfigError, match="divisible"):
        TrainConfig(model=PoseGenConfig(hidden_dim=30, num_heads=4)).validate()
    with pytest.raises(ValueError, match="tau"):
        TrainConfig(weights=LossWeights(tau=0.0)).validate()


def test_config_dict_round_trip():
    config = TrainConfig(epochs=5, batch_size=16, learning_rate=3e-4,
                         weights=LossWeights(lambda_inv=0.25),
                         model=TOY_MODEL, seed=9, eval_every=2)
    assert TrainConfig.from_dict(config.to_dict()) == config


def test_config_from_dict_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="unknown train keys.*momentum"):
        TrainConfig.from_dict({"momentum": 0.9})
    with pytest.raises(ConfigError, match="unknown model keys.*depth"):
        TrainConfig.from_dict({"model": {"depth": 4}})
    with pytest.raises(ConfigError, match="unknown loss keys.*lambda_x"):
        TrainConfig.from_dict({"weights": {"lambda_x": 1.0}})


def test_config_hash_is_stable_and_sensitive():
    a = config_hash(TOY_TRAIN)
    assert a == config_hash(TOY_TRAIN)
    assert a != config_hash(TrainConfig(epochs=2, batch_size=32,
                                        model=TOY_MODEL, seed=8))
    assert a != config_hash(TOY_TRAIN, AblationFlags(use_mlp=False))


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

def test_adam_matches_scalar_recurrence():
    p = Parameter(np.array(1.0), name="w", dtype=np.float64)
    opt = Adam({"w": p}, learning_rate=0.1)
    m = v = 0.0
    x = 1.0
    for t in range(1, 4):
        p.grad = np.full_like(p.data, 0.5)
        opt.step()
        m = 0.9 * m + 0.1 * 0.5
        v = 0.999 * v + 0.001 * 0.25
        x -= 0.1 * (m / (1 - 0.9 ** t)) / ((v / (1 - 0.999 ** t)) ** 0.5 + 1e-8)
        assert abs(float(p.data) - x) < 1e-12


def test_adam_zero_learning_rate_leaves_bits():
    p = Parameter(np.array([1.0, -2.0], dtype=np.float32), name="w")
    before = p.data.tobytes()
    opt = Adam({"w": p}, learning_rate=0.0)
    p.grad = np.array([0.3, -0.7], dtype=np.float32)
    opt.step()
    assert p.data.tobytes() == before


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def test_zero_epochs_returns_initialized_model(corpus):
    config = TrainConfig(epochs=0, model=TOY_MODEL, seed=7)
    model, history = train(corpus, config)
    assert history == []
    reference = init_model(TOY_MODEL)
    for name, param in model.params.items():
        assert param.data.tobytes() == reference.params[name].data.tobytes()


def test_zero_learning_rate_keeps_parameters_bit_equal(corpus):
    config = TrainConfig(epochs=2, batch_size=32, learning_rate=0.0,
                         model=TOY_MODEL, seed=7)
    model, history = train(corpus, config)
    assert len(history) == 2
    reference = init_model(TOY_MODEL)
    for name, param in model.params.items():
        assert param.data.tobytes() == reference.params[name].data.tobytes()


def test_history_structure_and_eval_schedule(corpus):
    config = TrainConfig(epochs=3, batch_size=32, model=TOY_MODEL,
                         seed=7, eval_every=2)
    _, history = train(corpus, config)
    assert [h["epoch"] for h in history] == [0, 1, 2]
    assert "val" not in history[0]
    assert "val" in history[1]
    assert "val" in history[2]  # the last epoch is always evaluated
    for entry in history:
        loss = entry["train_loss"]
        assert sorted(loss) == ["con", "coord", "inv", "skel", "total", "vis"]
        assert all(np.isfinite(v) for v in loss.values())
    assert json.loads(json.dumps(history)) == history


def test_training_is_deterministic(corpus):
    model_a, history_a = train(corpus, TOY_TRAIN)
    model_b, history_b = train(corpus, TOY_TRAIN)
    assert history_a == history_b
    for name, param in model_a.params.items():
        assert param.data.tobytes() == model_b.params[name].data.tobytes()


def test_training_loss_decreases(corpus):
    config = TrainConfig(epochs=10, batch_size=32, learning_rate=1e-3,
                         model=TOY_MODEL, seed=7, eval_every=10)
    _, history = train(corpus, config)
    assert history[-1]["train_loss"]["total"] < history[0]["train_loss"]["total"]


def test_empty_split_rejected(corpus):
    with pytest.raises(ConfigError, match="empty val split"):
        train(Corpus(train=corpus.train, val=[], test=[]), TOY_TRAIN)
    with pytest.raises(ConfigError, match="empty train split"):
        train(Corpus(train=[], val=corpus.val, test=[]), TOY_TRAIN)


def test_non_finite_loss_aborts_with_batch_id(corpus):
    table = EmbeddingTable()
    poisoned = corpus.train[3].id
    table.add(poisoned, np.full(EMBED_DIM, np.inf, dtype=np.float32))
    dc.set_nan_checks(False)
    try:
        with np.errstate(invalid="ignore"), \
                pytest.raises(TrainingAborted, match=r"epoch 0 batch \d+"):
            train(corpus, TOY_TRAIN, table=table)
    finally:
        dc.set_nan_checks(True)


def test_run_directory_artifacts(tmp_path, corpus):
    config = TrainConfig(epochs=2, batch_size=32, model=TOY_MODEL, seed=7)
    model, history = train(corpus, config, out_dir=tmp_path)

    manifest = json.loads((tmp_path / "run_manifest.json").read_text())
    assert manifest["config_hash"] == config_hash(config)
    assert manifest["corpus_digest"] == content_digest(corpus)
    assert manifest["embedding_source"] == "hashed"
    saved_history = json.loads((tmp_path / "history.json").read_text())
    assert saved_history == json.loads(json.dumps(history))

    val_mpjpe = [h["val"]["mpjpe_px"] for h in history]
    assert manifest["best_epoch"] == int(np.argmin(val_mpjpe))

    final = load_model(tmp_path / "final.pgck")
    for name, param in model.params.items():
        assert param.data.tobytes() == final.params[name].data.tobytes()
    load_model(tmp_path / "best.pgck")  # loadable, shapes verified inside


def test_checkpoint_eval_round_trip(tmp_path, corpus):
    model, _ = train(corpus, TOY_TRAIN, out_dir=tmp_path)
    live = evaluate_split(model, corpus.val)
    reloaded = evaluate_split(load_model(tmp_path / "final.pgck"), corpus.val)
    assert live.to_json() == reloaded.to_json()


def test_evaluate_split_rejects_empty(corpus):
    model = init_model(TOY_MODEL)
    with pytest.raises(ConfigError, match="empty split"):
        evaluate_split(model, [])


def test_embedding_matrix_shape_and_determinism(corpus):
    emb = embedding_matrix(corpus.val)
    assert emb.shape == (len(corpus.val), EMBED_DIM)
    assert emb.dtype == np.float32
    assert np.array_equal(emb, embedding_matrix(corpus.val))
    norms = np.linalg.norm(emb, axis=1)
    assert np.allclose(norms, 1.0, atol=1e-6)


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def test_default_grid_has_nineteen_rows():
    rows = list(default_sweep_grid().rows())
    assert len(rows) == 19
    by_factor = {}
    for factor, value in rows:
        by_factor.setdefault(factor, []).append(value)
    assert by_factor == {"hidden_dim": [384, 512, 640],
                         "num_layers": [4, 6, 8],
                         "num_heads": [4, 8],
                         "dropout_p": [0.05, 0.10, 0.20],
                         "lambda_inv": [0.25, 0.50, 1.00],
                         "lambda_con": [0.05, 0.10, 0.20],
                         "tau": [0.05, 0.07]}


def test_apply_factor_touches_exactly_one_field():
    config = apply_factor(TOY_TRAIN, "lambda_inv", 1.0)
    assert config.weights.lambda_inv == 1.0
    assert config.model == TOY_TRAIN.model
    config = apply_factor(TOY_TRAIN, "hidden_dim", 64)
    assert config.model.hidden_dim == 64
    assert config.weights == TOY_TRAIN.weights
    with pytest.raises(ConfigError, match="unknown sweep factor"):
        apply_factor(TOY_TRAIN, "warmup", 5)


def test_grid_validation_catches_bad_candidates():
    grid = SweepGrid(hidden_dim=(31,), num_layers=(), num_heads=(),
                     dropout_p=(), lambda_inv=(), lambda_con=(), tau=())
    with pytest.raises(ConfigError, match="divisible"):
        grid.validate(TOY_TRAIN)


def test_sweep_single_row_matches_plain_train(corpus):
    grid = SweepGrid(hidden_dim=(32,), num_layers=(), num_heads=(),
                     dropout_p=(), lambda_inv=(), lambda_con=(), tau=())
    report = sweep(corpus, grid, TOY_TRAIN)
    assert len(report["rows"]) == 1
    row = report["rows"][0]
    assert (row["factor"], row["value"], row["status"]) == ("hidden_dim", 32, "ok")

    model, _ = train(corpus, TOY_TRAIN)
    plain = evaluate_split(model, corpus.val)
    assert row["metrics"] == {"pckh_05": plain.pckh_05, "pck_010": plain.pck_010,
                              "mpjpe_px": plain.mpjpe_px, "vis_map": plain.vis_map}
    assert row["seed"] == TOY_TRAIN.seed
    assert row["wall_time_s"] >= 0.0


def test_sweep_rows_tagged_and_json_round_trips(corpus):
    grid = SweepGrid(hidden_dim=(16, 32, 48), num_layers=(), num_heads=(),
                     dropout_p=(), lambda_inv=(), lambda_con=(), tau=())
    report = sweep(corpus, grid, TOY_TRAIN)
    assert [r["value"] for r in report["rows"]] == [16, 32, 48]
    assert all(r["factor"] == "hidden_dim" for r in report["rows"])
    assert json.loads(json.dumps(report)) == report
    ranked = [r["mpjpe_px"] for r in report["ranking"]]
    assert ranked == sorted(ranked)
    assert report["ranking_criterion"] == "mpjpe_px"


def test_sweep_records_failed_rows_and_continues(corpus, monkeypatch):
    real_train = tr.train

    def sabotaged(corpus_, config, **kwargs):
        if config.model.hidden_dim == 48:
            raise RuntimeError("boom")
        return real_train(corpus_, config, **kwargs)

    monkeypatch.setattr(tr, "train", sabotaged)
    grid = SweepGrid(hidden_dim=(32, 48), num_layers=(), num_heads=(),
                     dropout_p=(), lambda_inv=(), lambda_con=(), tau=())
    report = sweep(corpus, grid, TOY_TRAIN)
    statuses = [r["status"] for r in report["rows"]]
    assert statuses == ["ok", "failed"]
    assert report["rows"][1]["error"] == "RuntimeError: boom"
    assert len(report["ranking"]) == 1


# ---------------------------------------------------------------------------
# ablation
# ---------------------------------------------------------------------------

def test_ablation_preset_is_the_five_standard_rows():
    preset = ablation_preset()
    assert len(preset) == 5
    assert preset[0] == AblationFlags()
    labels = [flag_label(f) for f in preset]
    assert labels == ["full model", "no contrastive", "no mlp",
                      "no transformer", "no visibility head"]
    for flags in preset[1:]:
        diffs = [k for k, v in dataclasses.asdict(flags).items() if not v]
        assert len(diffs) == 1


def test_ablate_report_structure(corpus):
    report = ablate(corpus, ablation_preset()[:2], TOY_TRAIN)
    assert report["metric_columns"] == ["pck_005", "pck_010", "mpjpe_px", "vis_map"]
    assert [r["label"] for r in report["rows"]] == ["full model", "no contrastive"]
    for row in report["rows"]:
        assert row["status"] == "ok"
        assert sorted(row["metrics"]) == sorted(report["metric_columns"])
    assert json.loads(json.dumps(report)) == report
    with pytest.raises(ConfigError, match="at least one flag set"):
        ablate(corpus, [], TOY_TRAIN)


def test_ablate_full_row_matches_plain_run(corpus):
    report = ablate(corpus, [AblationFlags()], TOY_TRAIN)
    model, _ = train(corpus, TOY_TRAIN)
    plain = evaluate_split(model, corpus.val)
    assert report["rows"][0]["metrics"]["mpjpe_px"] == plain.mpjpe_px


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def test_grad_check_toy_model_passes():
    config = PoseGenConfig(hidden_dim=32, num_layers=1, num_heads=2,
                           dropout_p=0.1, proj_dim=16, seed=2)
    report = grad_check(config, tolerance=1e-4, samples_per_group=4, seed=0)
    failing = {k: v for k, v in report["groups"].items() if not v["pass"]}
    assert report["pass"], f"groups over tolerance: {failing}"
    assert report["step"] == 1e-5
    assert report["batch_size"] == 2


def test_grad_check_zero_tolerance_always_fails():
    report = grad_check(TOY_MODEL, tolerance=0.0, samples_per_group=2, seed=0)
    assert not report["pass"]
    assert all(not g["pass"] for g in report["groups"].values())


def test_grad_check_query_key_grads_vanish_for_single_token():
    # with one token, attention weights are constant 1, so the q/k path
    # carries no gradient; both analytic and differenced values are 0
    report = grad_check(TOY_MODEL, tolerance=1e-4, samples_per_group=2, seed=1)
    for name, group in report["groups"].items():
        if ".attn.wq" in name or ".attn.wk" in name or ".attn.bq" in name \
                or ".attn.bk" in name:
            assert group["max_rel_err"] == 0.0


def test_loss_gradients_vanish_at_ground_truth():
    rng = np.random.default_rng(0)
    gt = rng.uniform(-1, 1, size=(1, 18, 2))
    vis = np.ones((1, 18))
    tape = Tape()
    pred = dc.Tensor(gt.copy(), tape=tape)
    total = coord_loss(pred, gt, vis) + skel_loss(pred, gt)
    tape.backward(total)
    assert np.all(pred.grad == 0.0)
