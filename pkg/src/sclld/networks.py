"""Model definitions: the generator and the discriminator/classifier ladder.

The generator maps a 100-d noise vector through a dense layer onto a
64-channel 25x25 grid, then two stride-2 transposed convolutions upsample to
a single-channel 100x100 image with a sigmoid output. The discriminator runs
the mirror ladder (1 -> 16 -> 32 -> 64 channels at stride 2, spatial sizes
100 -> 50 -> 25 -> 13), flattens, applies dropout 0.5 and a dense layer onto
one sigmoid unit. The supervised CNN baseline shares the exact architecture
and parameter names; only the role tag differs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

NOISE_DIM = 100
IMAGE_SIZE = 100
LEAKY_ALPHA = 0.01
DROPOUT_RATE = 0.5
INIT_STD = 0.02

GEN_SEED_CHANNELS = 64
GEN_SEED_SIZE = 25
DISC_CHANNELS = (16, 32, 64)
DISC_FLAT_FEATURES = 64 * 13 * 13

ROLES = ("generator", "discriminator", "cnn")
PHASES = ("phase1", "phase2")

_SALT_INIT_MODELS = 29
_SALT_INIT_CNN = 31


@dataclass
class ModelParams:
    """Named parameter tensors plus role and training-phase tags."""

    role: str
    phase: str
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {self.role!r}")
        if self.phase not in PHASES:
            raise ValueError(f"phase must be one of {PHASES}, got {self.phase!r}")

    def parameter_count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def copy(self, phase: str | None = None) -> "ModelParams":
        tensors = {name: ad.parameter(t.data.copy()) for name, t in self.tensors.items()}
        return ModelParams(self.role, phase if phase is not None else self.phase, tensors)


def _weight(rng: np.random.Generator, shape: tuple[int, ...]) -> Tensor:
    return ad.parameter(rng.normal(0.0, INIT_STD, size=shape))


def _zeros(shape: tuple[int, ...]) -> Tensor:
    return ad.parameter(np.zeros(shape))


def _init_generator_tensors(rng: np.random.Generator) -> dict[str, Tensor]:
    flat = GEN_SEED_CHANNELS * GEN_SEED_SIZE * GEN_SEED_SIZE
    return {
        "fc.weight": _weight(rng, (flat, NOISE_DIM)),
        "fc.bias": _zeros((flat,)),
        "up1.kernel": _weight(rng, (GEN_SEED_CHANNELS, 32, 3, 3)),
        "up2.kernel": _weight(rng, (32, 1, 3, 3)),
    }


def _init_discriminator_tensors(rng: np.random.Generator) -> dict[str, Tensor]:
    c1, c2, c3 = DISC_CHANNELS
    return {
        "conv1.kernel": _weight(rng, (c1, 1, 3, 3)),
        "conv1.bias": _zeros((c1,)),
        "conv2.kernel": _weight(rng, (c2, c1, 3, 3)),
        "conv2.bias": _zeros((c2,)),
        "conv3.kernel": _weight(rng, (c3, c2, 3, 3)),
        "conv3.bias": _zeros((c3,)),
        "head.weight": _weight(rng, (1, DISC_FLAT_FEATURES)),
        "head.bias": _zeros((1,)),
    }


def init_models(seed: int) -> tuple[ModelParams, ModelParams]:
    """Fresh generator and discriminator for one training run."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, _SALT_INIT_MODELS]))
    gen = ModelParams("generator", "phase1", _init_generator_tensors(rng))
    disc = ModelParams("discriminator", "phase1", _init_discriminator_tensors(rng))
    return gen, disc


def init_cnn(seed: int) -> ModelParams:
    """Randomly initialized classifier with the discriminator architecture."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, _SALT_INIT_CNN]))
    return ModelParams("cnn", "phase2", _init_discriminator_tensors(rng))


def generator_forward(gen: ModelParams, z) -> Tensor:
    """Map noise (100,) or (N, 100) to images (1, 100, 100) or (N, 1, 100, 100)."""
    if gen.role != "generator":
        raise ValueError(f"expected generator parameters, got role {gen.role!r}")
    z_t = z if isinstance(z, Tensor) else Tensor(z)
    if z_t.data.shape[-1] != NOISE_DIM:
        raise ValueError(f"noise dimension must be {NOISE_DIM}, got {z_t.data.shape}")
    batched = z_t.data.ndim == 2
    n = z_t.data.shape[0] if batched else 1
    p = gen.tensors
    h = ad.leaky_relu(ad.dense(z_t, p["fc.weight"], p["fc.bias"]), LEAKY_ALPHA)
    shape = (n, GEN_SEED_CHANNELS, GEN_SEED_SIZE, GEN_SEED_SIZE)
    h = ad.reshape(h, shape if batched else shape[1:])
    h = ad.leaky_relu(ad.conv2d_transpose(h, p["up1.kernel"], stride=2), LEAKY_ALPHA)
    return ad.sigmoid(ad.conv2d_transpose(h, p["up2.kernel"], stride=2))


def _check_classifier(model: ModelParams) -> None:
    if model.role not in ("discriminator", "cnn"):
        raise ValueError(f"expected discriminator or cnn parameters, got role {model.role!r}")


def discriminator_forward(
    model: ModelParams,
    x,
    train: bool = False,
    rng: np.random.Generator | None = None,
    return_features: bool = False,
):
    """Run the classifier ladder; returns the pre-sigmoid logit tensor.

    With ``return_features`` the activations of the final convolution block
    come back too (needed for the class-activation heatmaps).
    """
    _check_classifier(model)
    x_t = x if isinstance(x, Tensor) else Tensor(x)
    batched = x_t.data.ndim == 4
    n = x_t.data.shape[0] if batched else 1
    p = model.tensors
    h = ad.leaky_relu(ad.conv2d(x_t, p["conv1.kernel"], p["conv1.bias"], stride=2), LEAKY_ALPHA)
    h = ad.leaky_relu(ad.conv2d(h, p["conv2.kernel"], p["conv2.bias"], stride=2), LEAKY_ALPHA)
    features = ad.leaky_relu(
        ad.conv2d(h, p["conv3.kernel"], p["conv3.bias"], stride=2), LEAKY_ALPHA
    )
    flat = ad.reshape(features, (n, DISC_FLAT_FEATURES) if batched else (DISC_FLAT_FEATURES,))
    dropped = ad.dropout(flat, DROPOUT_RATE, train=train, rng=rng)
    logit = ad.dense(dropped, p["head.weight"], p["head.bias"])
    if batched:
        logit = ad.reshape(logit, (n,))
    if return_features:
        return logit, features
    return logit


def discriminator_prob(
    model: ModelParams,
    x,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Sigmoid output of the ladder: probability of the positive/real unit."""
    logit = discriminator_forward(model, x, train=train, rng=rng)
    return ad.sigmoid(logit)
