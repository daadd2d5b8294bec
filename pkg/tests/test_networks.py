"""Architecture shapes, parameter counts, and forward-pass contracts."""

import numpy as np
import pytest

from sclld.networks import (
    ModelParams,
    discriminator_forward,
    discriminator_prob,
    generator_forward,
    init_cnn,
    init_models,
)


def test_generator_parameter_count():
    gen, _ = init_models(0)
    # dense 100 -> 40000 (+bias), convT 64->32 and 32->1, both 3x3, no bias
    expected = 40000 * 100 + 40000 + 64 * 32 * 9 + 32 * 1 * 9
    assert gen.parameter_count() == expected == 4_058_720


def test_discriminator_parameter_count():
    _, disc = init_models(0)
    expected = (
        16 * 1 * 9 + 16
        + 32 * 16 * 9 + 32
        + 64 * 32 * 9 + 64
        + 64 * 13 * 13 + 1
    )
    assert disc.parameter_count() == expected == 34_113


def test_init_is_deterministic_per_seed():
    g1, d1 = init_models(5)
    g2, d2 = init_models(5)
    for a, b in ((g1, g2), (d1, d2)):
        for name in a.tensors:
            assert np.array_equal(a.tensors[name].data, b.tensors[name].data)
    g3, _ = init_models(6)
    assert not np.array_equal(g1.tensors["fc.weight"].data, g3.tensors["fc.weight"].data)


def test_cnn_init_differs_from_discriminator_init():
    _, disc = init_models(0)
    cnn = init_cnn(0)
    assert cnn.role == "cnn"
    assert cnn.phase == "phase2"
    assert set(cnn.tensors) == set(disc.tensors)
    assert not np.array_equal(
        cnn.tensors["conv1.kernel"].data, disc.tensors["conv1.kernel"].data
    )


def test_biases_start_at_zero_weights_do_not():
    gen, disc = init_models(1)
    for model in (gen, disc):
        for name, t in model.tensors.items():
            if name.endswith(".bias"):
                assert np.all(t.data == 0.0)
            else:
                assert np.any(t.data != 0.0)


def test_model_params_role_and_phase_validation():
    with pytest.raises(ValueError, match="role"):
        ModelParams("oracle", "phase1")
    with pytest.raises(ValueError, match="phase"):
        ModelParams("generator", "phase3")


def test_copy_is_deep_and_can_switch_phase():
    _, disc = init_models(0)
    clone = disc.copy(phase="phase2")
    assert clone.phase == "phase2"
    assert disc.phase == "phase1"
    clone.tensors["conv1.bias"].data += 1.0
    assert np.all(disc.tensors["conv1.bias"].data == 0.0)


def test_generator_forward_shapes():
    gen, _ = init_models(0)
    single = generator_forward(gen, np.zeros(100))
    assert single.data.shape == (1, 100, 100)
    batch = generator_forward(gen, np.zeros((3, 100)))
    assert batch.data.shape == (3, 1, 100, 100)
    assert np.all((batch.data >= 0.0) & (batch.data <= 1.0))


def test_generator_forward_validation():
    gen, disc = init_models(0)
    with pytest.raises(ValueError, match="noise dimension"):
        generator_forward(gen, np.zeros(64))
    with pytest.raises(ValueError, match="generator"):
        generator_forward(disc, np.zeros(100))


def test_discriminator_forward_shapes():
    _, disc = init_models(0)
    x = np.zeros((1, 100, 100))
    logit = discriminator_forward(disc, x)
    assert logit.data.shape == (1,)
    batch = discriminator_forward(disc, np.zeros((4, 1, 100, 100)))
    assert batch.data.shape == (4,)


def test_discriminator_features_shape():
    _, disc = init_models(0)
    logit, features = discriminator_forward(
        disc, np.zeros((2, 1, 100, 100)), return_features=True
    )
    assert features.data.shape == (2, 64, 13, 13)
    single_logit, single_features = discriminator_forward(
        disc, np.zeros((1, 100, 100)), return_features=True
    )
    assert single_features.data.shape == (64, 13, 13)


def test_discriminator_rejects_generator_params():
    gen, _ = init_models(0)
    with pytest.raises(ValueError, match="discriminator or cnn"):
        discriminator_forward(gen, np.zeros((1, 100, 100)))


def test_discriminator_prob_lies_in_unit_interval():
    rng = np.random.default_rng(0)
    _, disc = init_models(0)
    p = discriminator_prob(disc, rng.random((3, 1, 100, 100)))
    assert p.data.shape == (3,)
    assert np.all((p.data > 0.0) & (p.data < 1.0))


def test_cnn_accepts_classifier_forward():
    cnn = init_cnn(0)
    p = discriminator_prob(cnn, np.zeros((1, 100, 100)))
    assert p.data.shape == (1,)


def test_train_mode_dropout_changes_output():
    rng_img = np.random.default_rng(1)
    x = rng_img.random((1, 100, 100))
    _, disc = init_models(0)
    eval_out = discriminator_prob(disc, x).data
    train_out = discriminator_prob(
        disc, x, train=True, rng=np.random.default_rng(2)
    ).data
    assert not np.allclose(eval_out, train_out)
