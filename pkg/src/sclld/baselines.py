"""Comparison methods: a GP classifier and a supervised-only CNN.

The GP treats each flattened preprocessed image as one input point and fits
binary class posteriors with a Laplace approximation around the mode of the
latent function. Predictions integrate the logistic likelihood over the
approximate Gaussian with Gauss-Hermite quadrature. The CNN reuses the
discriminator architecture and the shared supervised training loop, but from
random initialization and with only the labelled pool to learn from.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .dataset import DatasetSplit, Sample
from .networks import ModelParams, init_cnn
from .training import (
    TrainConfig,
    _labels_of,
    _stack_inputs,
    supervised_loop,
    write_curve_csv,
)

GH_NODES = 20
NEWTON_TOL = 1e-8
NEWTON_MAX_ITER = 100
_JITTERS = (0.0, 1e-12, 1e-10, 1e-8, 1e-6)

_SALT_CNN_SHUFFLE = 61
_SALT_CNN_DROPOUT = 67


class GPHyperparams(NamedTuple):
    """Squared-exponential kernel settings: signal, noise, length scale."""

    sigma_f: float
    sigma_n: float
    length_scale: float


def se_kernel(
    xi: np.ndarray, xj: np.ndarray, i: int, j: int, hyper: GPHyperparams
) -> float:
    """Squared-exponential covariance between two points.

    The noise term contributes only on the diagonal, keyed on the sample
    indices ``i`` and ``j`` rather than on coordinate equality, so duplicate
    inputs at distinct indices stay correlated but not degenerate.
    """
    if hyper.sigma_f <= 0.0 or hyper.sigma_n < 0.0 or hyper.length_scale <= 0.0:
        raise ValueError(f"invalid kernel hyperparameters {hyper}")
    d2 = float(np.sum((np.asarray(xi, dtype=np.float64) - np.asarray(xj, dtype=np.float64)) ** 2))
    value = hyper.sigma_f**2 * np.exp(-d2 / (2.0 * hyper.length_scale**2))
    if i == j:
        value += hyper.sigma_n**2
    return float(value)


def kernel_matrix(x: np.ndarray, hyper: GPHyperparams) -> np.ndarray:
    """Dense SE kernel matrix with the noise term on the diagonal."""
    if hyper.sigma_f <= 0.0 or hyper.sigma_n < 0.0 or hyper.length_scale <= 0.0:
        raise ValueError(f"invalid kernel hyperparameters {hyper}")
    x = np.asarray(x, dtype=np.float64)
    sq = np.sum(x**2, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (x @ x.T), 0.0)
    np.fill_diagonal(d2, 0.0)
    k = hyper.sigma_f**2 * np.exp(-d2 / (2.0 * hyper.length_scale**2))
    k[np.diag_indices_from(k)] += hyper.sigma_n**2
    return k


def kernel_cross(x_star: np.ndarray, x: np.ndarray, hyper: GPHyperparams) -> np.ndarray:
    """Covariances between a query point and the training inputs (no noise)."""
    diff = np.asarray(x, dtype=np.float64) - np.asarray(x_star, dtype=np.float64)[None, :]
    d2 = np.sum(diff**2, axis=1)
    return hyper.sigma_f**2 * np.exp(-d2 / (2.0 * hyper.length_scale**2))


def _chol_with_jitter(matrix: np.ndarray) -> np.ndarray:
    for jitter in _JITTERS:
        try:
            m = matrix if jitter == 0.0 else matrix + jitter * np.eye(len(matrix))
            return cholesky(m, lower=True)
        except np.linalg.LinAlgError:
            continue
    raise np.linalg.LinAlgError(
        "kernel system not positive definite even with jitter up to 1e-6"
    )


def _log_sigmoid(z: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -z)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class GPModel:
    """Fitted Laplace state: mode, likelihood curvature, solved factors."""

    x: np.ndarray
    y: np.ndarray
    hyper: GPHyperparams
    f_hat: np.ndarray
    grad_log_lik: np.ndarray
    sqrt_w: np.ndarray
    chol_b: np.ndarray
    log_marginal: float


def _log_lik(y: np.ndarray, f: np.ndarray) -> float:
    return float(np.sum(_log_sigmoid(y * f)))


def gp_fit_laplace(x: np.ndarray, y: np.ndarray, hyper: GPHyperparams) -> GPModel:
    """Find the posterior mode of the latent function by damped Newton steps.

    ``y`` holds +-1 labels. Iterates the standard stable formulation built on
    B = I + W^(1/2) K W^(1/2): each step solves for the new mode through the
    Cholesky factor of B, halving the step whenever the penalized objective
    psi(f) = log p(y|f) - f' K^(-1) f / 2 would decrease. Converged when the
    mode moves less than 1e-8 in any coordinate.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"inputs must be 2-d (n, d), got shape {x.shape}")
    if y.shape != (x.shape[0],):
        raise ValueError(f"labels shape {y.shape} does not match {x.shape[0]} inputs")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be +-1")
    n = x.shape[0]
    k = kernel_matrix(x, hyper)
    f = np.zeros(n)
    a = np.zeros(n)  # K a = f throughout
    psi = _log_lik(y, f)  # f=0 makes the quadratic term vanish
    sqrt_w = np.zeros(n)
    chol_b = np.eye(n)
    for _ in range(NEWTON_MAX_ITER):
        pi = _sigmoid(f)
        t = (y + 1.0) / 2.0
        grad = t - pi
        w = pi * (1.0 - pi)
        sqrt_w = np.sqrt(w)
        b = np.eye(n) + sqrt_w[:, None] * k * sqrt_w[None, :]
        chol_b = _chol_with_jitter(b)
        rhs = w * f + grad
        a_new = rhs - sqrt_w * cho_solve((chol_b, True), sqrt_w * (k @ rhs))
        step = 1.0
        # line search on the Newton direction in a-space (f = K a is linear)
        for _ in range(30):
            a_try = a + step * (a_new - a)
            f_try = k @ a_try
            psi_try = _log_lik(y, f_try) - 0.5 * float(f_try @ a_try)
            if psi_try >= psi or step < 1e-10:
                break
            step *= 0.5
        delta = np.max(np.abs(f_try - f))
        f, a, psi = f_try, a_try, psi_try
        if delta < NEWTON_TOL:
            break
    pi = _sigmoid(f)
    sqrt_w = np.sqrt(pi * (1.0 - pi))
    b = np.eye(n) + sqrt_w[:, None] * k * sqrt_w[None, :]
    chol_b = _chol_with_jitter(b)
    log_marginal = (
        -0.5 * float(f @ a)
        + _log_lik(y, f)
        - float(np.sum(np.log(np.diag(chol_b))))
    )
    return GPModel(x, y, hyper, f, (y + 1.0) / 2.0 - pi, sqrt_w, chol_b, log_marginal)


def logistic_gauss_integral(mean: float, variance: float) -> float:
    """E[sigmoid(f)] for f ~ N(mean, variance), by 20-node Gauss-Hermite."""
    if variance < 0.0:
        raise ValueError(f"variance must be non-negative, got {variance}")
    nodes, weights = hermgauss(GH_NODES)
    z = mean + np.sqrt(2.0 * variance) * nodes
    return float(np.sum(weights * _sigmoid(z)) / np.sqrt(np.pi))


def gp_predict(model: GPModel, x_star: np.ndarray) -> float:
    """Predictive probability of the positive class at one query point."""
    x_star = np.asarray(x_star, dtype=np.float64).reshape(-1)
    if x_star.shape[0] != model.x.shape[1]:
        raise ValueError(
            f"query has {x_star.shape[0]} features, model expects {model.x.shape[1]}"
        )
    k_star = kernel_cross(x_star, model.x, model.hyper)
    mean = float(k_star @ model.grad_log_lik)
    v = solve_triangular(model.chol_b, model.sqrt_w * k_star, lower=True)
    prior_var = model.hyper.sigma_f**2 + model.hyper.sigma_n**2
    variance = max(prior_var - float(v @ v), 0.0)
    return logistic_gauss_integral(mean, variance)


def gp_predict_batch(model: GPModel, x_stars: np.ndarray) -> np.ndarray:
    return np.array([gp_predict(model, row) for row in np.asarray(x_stars)])


def gp_select_hyperparameters(
    x: np.ndarray, y: np.ndarray, grid: list[GPHyperparams]
) -> tuple[GPHyperparams, list[tuple[GPHyperparams, float]]]:
    """Pick the grid point with the highest Laplace evidence.

    Ties resolve to the smallest length scale, then the smallest noise.
    Returns the winner plus every (candidate, log evidence) pair.
    """
    if not grid:
        raise ValueError("hyperparameter grid is empty")
    scored: list[tuple[GPHyperparams, float]] = []
    for hyper in grid:
        model = gp_fit_laplace(x, y, hyper)
        scored.append((hyper, model.log_marginal))
    best = min(scored, key=lambda hs: (-hs[1], hs[0].length_scale, hs[0].sigma_n))
    return best[0], scored


DEFAULT_GP_GRID = [
    GPHyperparams(sigma_f, sigma_n, length)
    for sigma_f in (0.5, 1.0, 2.0)
    for length in (5.0, 10.0, 20.0, 40.0)
    for sigma_n in (0.01, 0.1)
]


# ---------------------------------------------------------------------------
# GP persistence
# ---------------------------------------------------------------------------

_GP_MAGIC = b"SCGP"
_GP_VERSION = 1


def save_gp(model: GPModel, path: Path) -> None:
    n, d = model.x.shape
    parts = [
        _GP_MAGIC,
        struct.pack("<I", _GP_VERSION),
        struct.pack("<3d", model.hyper.sigma_f, model.hyper.sigma_n, model.hyper.length_scale),
        struct.pack("<d", model.log_marginal),
        struct.pack("<2I", n, d),
    ]
    for arr in (model.x, model.y, model.f_hat, model.grad_log_lik, model.sqrt_w, model.chol_b):
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(parts))


def load_gp(path: Path) -> GPModel:
    data = Path(path).read_bytes()
    if data[:4] != _GP_MAGIC:
        raise ValueError("not a GP model file: bad magic")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != _GP_VERSION:
        raise ValueError(f"unsupported GP model version {version}")
    sigma_f, sigma_n, length_scale, log_marginal = struct.unpack_from("<4d", data, 8)
    n, d = struct.unpack_from("<2I", data, 40)
    pos = 48
    sizes = [n * d, n, n, n, n, n * n]
    shapes = [(n, d), (n,), (n,), (n,), (n,), (n, n)]
    arrays = []
    for size, shape in zip(sizes, shapes):
        end = pos + 8 * size
        if end > len(data):
            raise ValueError("truncated GP model file")
        arrays.append(np.frombuffer(data[pos:end], dtype="<f8").reshape(shape).copy())
        pos = end
    if pos != len(data):
        raise ValueError("trailing bytes in GP model file")
    x, y, f_hat, grad, sqrt_w, chol_b = arrays
    return GPModel(
        x, y, GPHyperparams(sigma_f, sigma_n, length_scale), f_hat, grad, sqrt_w, chol_b, log_marginal
    )


# ---------------------------------------------------------------------------
# supervised CNN baseline
# ---------------------------------------------------------------------------


def cnn_train_supervised(
    split: DatasetSplit,
    config: TrainConfig,
    use_sobel: bool = True,
    curve_path: Path | None = None,
    cache: dict[str, np.ndarray] | None = None,
) -> tuple[ModelParams, list[tuple]]:
    """Train the classifier ladder from scratch on the labelled pool only.

    Same optimizer, batch regime and early stopping as the fine-tuning phase;
    the difference under study is the absence of adversarial pretraining.
    Curve rows are (epoch, train_loss, val_loss, train_acc, val_acc).
    """
    if not split.train_labelled:
        raise ValueError("CNN baseline needs a labelled training pool")
    if not split.validation:
        raise ValueError("CNN baseline needs a validation pool for early stopping")
    model = init_cnn(config.seed)
    x_train = _stack_inputs(split.train_labelled, use_sobel, cache)
    y_train = _labels_of(split.train_labelled)
    x_val = _stack_inputs(split.validation, use_sobel, cache)
    y_val = _labels_of(split.validation)
    model, curve = supervised_loop(
        model,
        x_train,
        y_train,
        x_val,
        y_val,
        config,
        config.lr_d,
        _SALT_CNN_SHUFFLE,
        _SALT_CNN_DROPOUT,
        track_accuracy=True,
    )
    if curve_path is not None:
        write_curve_csv(
            curve_path,
            ["epoch", "train_loss", "val_loss", "train_acc", "val_acc"],
            curve,
        )
    return model, curve


def gp_training_matrix(
    samples: list[Sample],
    use_sobel: bool = True,
    cache: dict[str, np.ndarray] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Flattened preprocessed images and +-1 labels for the GP."""
    x = _stack_inputs(samples, use_sobel, cache).reshape(len(samples), -1)
    y = _labels_of(samples) * 2.0 - 1.0
    return x, y
