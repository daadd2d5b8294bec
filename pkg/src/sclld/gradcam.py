"""Class-activation heatmaps from the final convolution block.

The map differentiates the pre-sigmoid logit with respect to the last conv
activations, weights each channel by the spatial mean of its gradient,
combines channels, rectifies, and upsamples back to the input frame. The
result highlights the regions that pushed the classifier toward the
positive class.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .imaging import GrayImage, NETWORK_INPUT_SIZE, resize_bilinear
from .networks import ModelParams, discriminator_forward


def gradcam(model: ModelParams, image_input: np.ndarray) -> GrayImage:
    """Heatmap in [0, 1] at the network input resolution (100x100).

    Requires a fine-tuned (phase-2) classifier; a phase-1 head still encodes
    real/fake and its attributions would be meaningless for the class.
    """
    if model.role not in ("discriminator", "cnn"):
        raise ValueError(f"cannot explain role {model.role!r}")
    if model.phase != "phase2":
        raise ValueError("heatmaps need a phase-2 classifier checkpoint")
    arr = np.asarray(image_input, dtype=np.float64)
    if arr.ndim != 3 or arr.shape != (1, NETWORK_INPUT_SIZE, NETWORK_INPUT_SIZE):
        raise ValueError(
            f"expected one (1, {NETWORK_INPUT_SIZE}, {NETWORK_INPUT_SIZE}) input, got {arr.shape}"
        )
    with Tape() as tape:
        logit, features = discriminator_forward(
            model, arr, train=False, return_features=True
        )
        ad.backward(logit, tape)
    grads = features.grad  # (64, 13, 13)
    acts = features.data
    weights = grads.mean(axis=(1, 2))
    cam = np.maximum(np.tensordot(weights, acts, axes=([0], [0])), 0.0)
    upsampled = resize_bilinear(GrayImage(cam), NETWORK_INPUT_SIZE, NETWORK_INPUT_SIZE)
    pixels = np.maximum(upsampled.pixels, 0.0)
    peak = pixels.max()
    if peak > 0.0:
        pixels = pixels / peak
    return GrayImage(pixels)
