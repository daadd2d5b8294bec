"""Training loops: adversarial steps, fine-tuning, early stopping, inference."""

import numpy as np
import pytest

import sclld.autodiff as ad
import sclld.training as training
from sclld.dataset import generate_synthetic, label_audit, partition_dataset
from sclld.networks import init_cnn, init_models
from sclld.optim import init_adam
from sclld.training import (
    TrainConfig,
    classify,
    evaluate_probabilities,
    gan_train_step,
    load_preprocessed,
    minimax_objective,
    predict_proba,
    supervised_finetune,
    supervised_loop,
    uncertainty_score,
    unsupervised_train,
    write_curve_csv,
)


@pytest.fixture(scope="module")
def micro_split(tmp_path_factory):
    out = tmp_path_factory.mktemp("micro-corpus")
    samples, _ = generate_synthetic(30, 21, out)
    return partition_dataset(samples, labelled_fraction=0.5, seed=0)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def test_train_config_defaults_are_valid():
    config = TrainConfig()
    assert config.iterations == 4000
    assert config.batch_size == 32
    assert config.early_stop_patience == 5


def test_train_config_validation():
    with pytest.raises(ValueError, match="iterations"):
        TrainConfig(iterations=-1)
    with pytest.raises(ValueError, match="batch size"):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError, match="lr_g"):
        TrainConfig(lr_g=0.0)
    with pytest.raises(ValueError, match="beta2"):
        TrainConfig(beta2=1.0)
    with pytest.raises(ValueError, match="finetune_epochs_max"):
        TrainConfig(finetune_epochs_max=0)
    with pytest.raises(ValueError, match="early_stop_patience"):
        TrainConfig(early_stop_patience=0)


# ---------------------------------------------------------------------------
# adversarial objective
# ---------------------------------------------------------------------------


def test_minimax_objective_at_half_is_minus_two_log_two():
    value = minimax_objective(np.full(32, 0.5), np.full(32, 0.5))
    assert abs(value - (-2.0 * np.log(2.0))) < 1e-12


def test_minimax_objective_clamps_extremes_to_finite_values():
    value = minimax_objective(np.array([1.0]), np.array([1.0]))
    assert np.isfinite(value)
    assert value == pytest.approx(np.log(1.0 - ad.BCE_CLAMP) + np.log(ad.BCE_CLAMP))


def test_minimax_objective_rejects_empty_sides():
    with pytest.raises(ValueError, match="at least one"):
        minimax_objective(np.array([]), np.array([0.5]))


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


def test_batch_indices_cover_pool_before_repeating():
    gen = training._batch_indices(10, 3, np.random.default_rng(0))
    seen = []
    for _ in range(4):
        seen.extend(next(gen).tolist())
    # the first 10 draws enumerate the pool exactly once
    assert sorted(seen[:10]) == list(range(10))
    assert len(seen) == 12


def test_batch_indices_wraparound_spans_two_epochs():
    gen = training._batch_indices(5, 4, np.random.default_rng(1))
    first = next(gen)
    second = next(gen)
    assert len(first) == 4
    assert len(second) == 4
    # second batch holds the leftover sample plus three fresh draws
    assert len(set(first.tolist() + second.tolist())) >= 5


def test_batch_indices_deterministic_for_seed():
    a = training._batch_indices(8, 3, np.random.default_rng(7))
    b = training._batch_indices(8, 3, np.random.default_rng(7))
    for _ in range(5):
        assert np.array_equal(next(a), next(b))


def test_epoch_batches_partition_the_pool():
    batches = training._epoch_batches(11, 4, np.random.default_rng(2))
    sizes = [len(b) for b in batches]
    assert sizes == [4, 4, 3]
    assert sorted(np.concatenate(batches).tolist()) == list(range(11))


# ---------------------------------------------------------------------------
# adversarial steps
# ---------------------------------------------------------------------------


def test_gan_train_step_returns_three_losses_and_updates_both_models():
    rng = np.random.default_rng(0)
    gen, disc = init_models(0)
    g_before = gen.tensors["fc.weight"].data.copy()
    d_before = disc.tensors["conv1.kernel"].data.copy()
    opt_g = init_adam(gen.tensors, 1e-3)
    opt_d = init_adam(disc.tensors, 1e-3)
    batch = rng.random((2, 1, 100, 100))
    losses = gan_train_step(
        batch, gen, disc, opt_g, opt_d, np.random.default_rng(1), np.random.default_rng(2)
    )
    assert len(losses) == 3
    assert all(np.isfinite(v) for v in losses)
    assert not np.array_equal(gen.tensors["fc.weight"].data, g_before)
    assert not np.array_equal(disc.tensors["conv1.kernel"].data, d_before)


def test_gan_train_step_validates_batch_shape():
    gen, disc = init_models(0)
    opt_g = init_adam(gen.tensors, 1e-3)
    opt_d = init_adam(disc.tensors, 1e-3)
    with pytest.raises(ValueError, match="1, 100, 100"):
        gan_train_step(
            np.zeros((2, 1, 50, 50)),
            gen,
            disc,
            opt_g,
            opt_d,
            np.random.default_rng(0),
            np.random.default_rng(1),
        )


def test_generator_step_leaves_discriminator_grads_zeroed():
    gen, disc = init_models(0)
    opt_g = init_adam(gen.tensors, 1e-3)
    training.generator_step(
        gen, disc, opt_g, 2, np.random.default_rng(0), np.random.default_rng(1)
    )
    for t in disc.tensors.values():
        assert np.all(t.grad == 0.0)


# ---------------------------------------------------------------------------
# phase 1
# ---------------------------------------------------------------------------


def test_unsupervised_train_runs_and_reports_curve(micro_split, tmp_path):
    config = TrainConfig(iterations=2, batch_size=4, seed=0)
    curve_path = tmp_path / "curve.csv"
    disc, curve = unsupervised_train(
        micro_split, config, use_sobel=True, curve_path=curve_path
    )
    assert disc.role == "discriminator"
    assert disc.phase == "phase1"
    assert [row[0] for row in curve] == [1, 2]
    lines = curve_path.read_text().splitlines()
    assert lines[0] == "iteration,loss_real,loss_fake,loss_gen"
    assert len(lines) == 3


def test_unsupervised_train_never_reads_labels(micro_split):
    config = TrainConfig(iterations=1, batch_size=4, seed=0)
    with label_audit() as audit:
        unsupervised_train(micro_split, config, use_sobel=True)
    assert audit.count == 0


def test_unsupervised_train_detects_label_leaks(micro_split, monkeypatch):
    real_loader = training.load_preprocessed

    def leaky_loader(sample, use_sobel, cache=None):
        sample.has_label  # the audited property
        return real_loader(sample, use_sobel, cache)

    monkeypatch.setattr(training, "load_preprocessed", leaky_loader)
    config = TrainConfig(iterations=1, batch_size=4, seed=0)
    with pytest.raises(RuntimeError, match="dereferenced"):
        unsupervised_train(micro_split, config, use_sobel=True)


def test_unsupervised_train_can_return_generator(micro_split):
    config = TrainConfig(iterations=1, batch_size=4, seed=0)
    out = []
    unsupervised_train(micro_split, config, use_sobel=True, generator_out=out)
    assert len(out) == 1
    assert out[0].role == "generator"


def test_unsupervised_train_rejects_empty_pool():
    import sclld.dataset as ds

    split = ds.DatasetSplit([], [], [], [ds.Sample("t", "/x.pgm", 0)], seed=0)
    with pytest.raises(ValueError, match="empty"):
        unsupervised_train(split, TrainConfig(iterations=1, seed=0))


# ---------------------------------------------------------------------------
# early stopping
# ---------------------------------------------------------------------------


def scripted_loop(monkeypatch, val_sequence, patience, max_epochs=100):
    """Run supervised_loop with validation losses replaced by a script.

    Returns the curve and a fingerprint of the parameters after each epoch so
    the restored snapshot can be identified.
    """
    model = init_cnn(0)
    x = np.random.default_rng(0).random((6, 1, 100, 100))
    y = np.array([0.0, 1.0] * 3)
    calls = {"i": 0}
    fingerprints = []

    def fake_eval(m, xs, ys):
        value = val_sequence[calls["i"]]
        calls["i"] += 1
        fingerprints.append(m.tensors["head.weight"].data.copy())
        return value

    monkeypatch.setattr(training, "_eval_bce", fake_eval)
    config = TrainConfig(
        iterations=0,
        batch_size=3,
        finetune_epochs_max=max_epochs,
        early_stop_patience=patience,
        seed=0,
    )
    model, curve = supervised_loop(
        model, x, y, x[:2], y[:2], config, 1e-3, shuffle_salt=1, dropout_salt=2
    )
    return model, curve, fingerprints


def test_early_stop_restores_best_epoch(monkeypatch):
    vals = [1.0, 0.9, 0.95, 0.96, 0.97]
    model, curve, prints = scripted_loop(monkeypatch, vals, patience=3)
    # stops after three straight non-improvements; best was epoch 2
    assert len(curve) == 5
    assert [row[2] for row in curve] == vals
    assert np.array_equal(model.tensors["head.weight"].data, prints[1])


def test_training_continues_while_improving(monkeypatch):
    vals = [0.5, 0.4, 0.3, 0.2]
    model, curve, prints = scripted_loop(monkeypatch, vals, patience=2, max_epochs=4)
    assert len(curve) == 4
    assert np.array_equal(model.tensors["head.weight"].data, prints[-1])


def test_plateau_does_not_count_as_improvement(monkeypatch):
    vals = [0.5, 0.5, 0.5]
    model, curve, prints = scripted_loop(monkeypatch, vals, patience=2)
    assert len(curve) == 3
    assert np.array_equal(model.tensors["head.weight"].data, prints[0])


# ---------------------------------------------------------------------------
# phase 2
# ---------------------------------------------------------------------------


def test_supervised_finetune_produces_phase2_model(micro_split, tmp_path):
    config = TrainConfig(iterations=1, batch_size=4, finetune_epochs_max=2, seed=0)
    disc, _ = unsupervised_train(micro_split, config, use_sobel=True)
    frozen = {k: t.data.copy() for k, t in disc.tensors.items()}
    curve_path = tmp_path / "phase2.csv"
    model, curve = supervised_finetune(
        disc, micro_split, config, use_sobel=True, curve_path=curve_path
    )
    assert model.phase == "phase2"
    assert disc.phase == "phase1"
    # the phase-1 parameters stay untouched; fine-tuning works on a copy
    for k in frozen:
        assert np.array_equal(disc.tensors[k].data, frozen[k])
    lines = curve_path.read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss"


def test_supervised_finetune_checks_inputs(micro_split):
    config = TrainConfig(seed=0)
    gen, disc = init_models(0)
    with pytest.raises(ValueError, match="discriminator"):
        supervised_finetune(gen, micro_split, config)
    import sclld.dataset as ds

    no_val = ds.DatasetSplit(
        micro_split.train_unlabelled, micro_split.train_labelled, [], micro_split.test, 0
    )
    with pytest.raises(ValueError, match="validation"):
        supervised_finetune(disc, no_val, config)
    no_labels = ds.DatasetSplit(
        micro_split.train_unlabelled, [], micro_split.validation, micro_split.test, 0
    )
    with pytest.raises(ValueError, match="labelled"):
        supervised_finetune(disc, no_labels, config)


# ---------------------------------------------------------------------------
# inference helpers
# ---------------------------------------------------------------------------


def test_predict_proba_chunks_match_per_sample_calls():
    rng = np.random.default_rng(3)
    model = init_cnn(0)
    x = rng.random((130, 1, 100, 100))  # spans three chunks
    batch = predict_proba(model, x)
    singles = np.array([predict_proba(model, x[i])[0] for i in range(130)])
    assert np.allclose(batch, singles, atol=1e-12)


def test_predict_proba_validates_shapes():
    model = init_cnn(0)
    with pytest.raises(ValueError, match="100, 100"):
        predict_proba(model, np.zeros((2, 1, 64, 64)))


def test_classify_requires_phase2():
    _, disc = init_models(0)
    with pytest.raises(ValueError, match="phase-1"):
        classify(disc, np.zeros((1, 100, 100)))
    gen, _ = init_models(0)
    with pytest.raises(ValueError, match="role"):
        classify(gen, np.zeros((1, 100, 100)))


def test_classify_threshold_is_strict_at_half():
    model = init_cnn(0)
    model.tensors["head.weight"].data[:] = 0.0
    model.tensors["head.bias"].data[:] = 0.0
    label, prob = classify(model, np.ones((1, 100, 100)))
    assert prob == pytest.approx(0.5)
    assert label == 0


def test_uncertainty_score_shape():
    assert uncertainty_score(0.5) == 1.0
    assert uncertainty_score(0.0) == 0.0
    assert uncertainty_score(1.0) == pytest.approx(0.0)
    assert uncertainty_score(0.75) == pytest.approx(0.5)
    with pytest.raises(ValueError, match="probability"):
        uncertainty_score(1.5)


def test_evaluate_probabilities_outputs_align(micro_split):
    model = init_cnn(0)
    scores, preds, truths, loss = evaluate_probabilities(
        model, micro_split.test, use_sobel=True
    )
    n = len(micro_split.test)
    assert scores.shape == preds.shape == truths.shape == (n,)
    assert set(np.unique(preds)) <= {0, 1}
    assert np.isfinite(loss)
    assert np.array_equal(preds, (scores > 0.5).astype(int))


def test_evaluate_probabilities_rejects_empty_and_unlabelled(micro_split):
    model = init_cnn(0)
    with pytest.raises(ValueError, match="empty"):
        evaluate_probabilities(model, [])
    with pytest.raises(ValueError, match="no label"):
        evaluate_probabilities(model, micro_split.train_unlabelled[:2])


def test_load_preprocessed_uses_cache(micro_split):
    cache = {}
    sample = micro_split.test[0]
    a = load_preprocessed(sample, True, cache)
    assert sample.id in cache
    cache[sample.id] = np.zeros_like(a)
    b = load_preprocessed(sample, True, cache)
    assert np.array_equal(b, 0.0 * a)


def test_write_curve_csv_uses_full_precision(tmp_path):
    path = tmp_path / "c.csv"
    write_curve_csv(path, ["epoch", "value"], [(1, 0.1), (2, 1.0 / 3.0)])
    lines = path.read_text().splitlines()
    assert lines[1] == "1,0.1"
    assert lines[2] == f"2,{1.0 / 3.0!r}"
