"""Two-phase training: adversarial pretraining, then supervised fine-tuning.

Phase 1 trains generator and discriminator on image content alone; the code
path is wrapped in a label audit and refuses to proceed if any label was
dereferenced. Phase 2 reinterprets the discriminator's real/fake sigmoid
unit as the probability of the positive class and fine-tunes every layer on
the small labelled pool, with early stopping on a held-out validation pool.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .dataset import DatasetSplit, Sample, label_audit
from .imaging import preprocess_image, read_pgm, to_network_input
from .networks import (
    ModelParams,
    NOISE_DIM,
    discriminator_prob,
    generator_forward,
    init_models,
)
from .optim import AdamState, adam_step, init_adam

ITERATION_PRESETS = (3500, 4000, 4500)
DEFAULT_ITERATIONS = 4000
DECISION_THRESHOLD = 0.5

_SALT_PHASE1_SHUFFLE = 41
_SALT_PHASE1_NOISE = 43
_SALT_PHASE1_DROPOUT = 47
_SALT_PHASE2_SHUFFLE = 53
_SALT_PHASE2_DROPOUT = 59


@dataclass
class TrainConfig:
    """Hyperparameters shared by both phases and the CNN baseline."""

    iterations: int = DEFAULT_ITERATIONS
    batch_size: int = 32
    lr_g: float = 1e-3
    lr_d: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    finetune_epochs_max: int = 100
    early_stop_patience: int = 5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.iterations < 0:
            raise ValueError(f"iterations must be non-negative, got {self.iterations}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be positive, got {self.batch_size}")
        for name in ("lr_g", "lr_d"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("beta1", "beta2"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {getattr(self, name)}")
        if self.finetune_epochs_max < 1:
            raise ValueError(
                f"finetune_epochs_max must be positive, got {self.finetune_epochs_max}"
            )
        if self.early_stop_patience < 1:
            raise ValueError(
                f"early_stop_patience must be positive, got {self.early_stop_patience}"
            )


def _rng(seed: int, salt: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, salt]))


def minimax_objective(p_real: np.ndarray, p_fake: np.ndarray) -> float:
    """Value of the adversarial game: E[ln D(x)] + E[ln(1 - D(G(z)))].

    Probabilities are clamped like the training loss so the value stays
    finite; with every output pinned at 0.5 this evaluates to -2 ln 2.
    """
    pr = np.clip(np.asarray(p_real, dtype=np.float64), ad.BCE_CLAMP, 1.0 - ad.BCE_CLAMP)
    pf = np.clip(np.asarray(p_fake, dtype=np.float64), ad.BCE_CLAMP, 1.0 - ad.BCE_CLAMP)
    if pr.size == 0 or pf.size == 0:
        raise ValueError("objective needs at least one real and one fake probability")
    return float(np.mean(np.log(pr)) + np.mean(np.log1p(-pf)))


def load_preprocessed(
    sample: Sample, use_sobel: bool, cache: dict[str, np.ndarray] | None = None
) -> np.ndarray:
    """Preprocessed (1, 100, 100) input for one sample, with optional caching."""
    if cache is not None and sample.id in cache:
        return cache[sample.id]
    image = read_pgm(Path(sample.image_path).read_bytes())
    arr = to_network_input(preprocess_image(image, use_sobel=use_sobel))
    if cache is not None:
        cache[sample.id] = arr
    return arr


def _stack_inputs(
    samples: list[Sample], use_sobel: bool, cache: dict[str, np.ndarray] | None
) -> np.ndarray:
    return np.stack([load_preprocessed(s, use_sobel, cache) for s in samples])


def _batch_indices(n: int, batch_size: int, rng: np.random.Generator):
    """Endless stream of index batches; reshuffles whenever the pool wraps."""
    order = rng.permutation(n)
    pos = 0
    while True:
        if pos + batch_size <= n:
            yield order[pos : pos + batch_size]
            pos += batch_size
        else:
            tail = order[pos:]
            order = rng.permutation(n)
            pos = batch_size - len(tail)
            yield np.concatenate([tail, order[:pos]])


def discriminator_step(
    real_batch: np.ndarray,
    gen: ModelParams,
    disc: ModelParams,
    opt_d: AdamState,
    rng_noise: np.random.Generator,
    rng_dropout: np.random.Generator,
) -> tuple[float, float]:
    """One discriminator update on a real batch plus a fresh fake batch."""
    n = real_batch.shape[0]
    z = rng_noise.standard_normal((n, NOISE_DIM))
    fake = generator_forward(gen, z).data  # no tape active: generator frozen here
    ad.zero_grad(disc.tensors)
    with Tape() as tape:
        p_real = discriminator_prob(disc, real_batch, train=True, rng=rng_dropout)
        loss_real = ad.bce_loss(p_real, np.ones(n))
        p_fake = discriminator_prob(disc, fake, train=True, rng=rng_dropout)
        loss_fake = ad.bce_loss(p_fake, np.zeros(n))
        total = ad.add(loss_real, loss_fake)
        ad.backward(total, tape)
    adam_step(disc.tensors, opt_d)
    return float(loss_real.data), float(loss_fake.data)


def generator_step(
    gen: ModelParams,
    disc: ModelParams,
    opt_g: AdamState,
    batch_size: int,
    rng_noise: np.random.Generator,
    rng_dropout: np.random.Generator,
) -> float:
    """One generator update against the discriminator's current judgment.

    Uses the non-saturating form: minimize BCE of D(G(z)) against the real
    label, which keeps gradients alive early when D wins easily.
    """
    z = rng_noise.standard_normal((batch_size, NOISE_DIM))
    ad.zero_grad(gen.tensors)
    ad.zero_grad(disc.tensors)  # gradients flow through D; discard them after
    with Tape() as tape:
        fake = generator_forward(gen, z)
        p = discriminator_prob(disc, fake, train=True, rng=rng_dropout)
        loss = ad.bce_loss(p, np.ones(batch_size))
        ad.backward(loss, tape)
    adam_step(gen.tensors, opt_g)
    ad.zero_grad(disc.tensors)
    return float(loss.data)


def gan_train_step(
    real_batch: np.ndarray,
    gen: ModelParams,
    disc: ModelParams,
    opt_g: AdamState,
    opt_d: AdamState,
    rng_noise: np.random.Generator,
    rng_dropout: np.random.Generator,
) -> tuple[float, float, float]:
    """One full adversarial iteration: discriminator update then generator."""
    arr = np.asarray(real_batch, dtype=np.float64)
    if arr.ndim != 4 or arr.shape[1:] != (1, 100, 100):
        raise ValueError(
            f"real batch must have shape (N, 1, 100, 100), got {arr.shape}"
        )
    loss_real, loss_fake = discriminator_step(arr, gen, disc, opt_d, rng_noise, rng_dropout)
    loss_gen = generator_step(gen, disc, opt_g, arr.shape[0], rng_noise, rng_dropout)
    return loss_real, loss_fake, loss_gen


def write_curve_csv(path: Path, header: list[str], rows: list[tuple]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def unsupervised_train(
    split: DatasetSplit,
    config: TrainConfig,
    use_sobel: bool = True,
    curve_path: Path | None = None,
    cache: dict[str, np.ndarray] | None = None,
    generator_out: list | None = None,
) -> tuple[ModelParams, list[tuple[int, float, float, float]]]:
    """Phase 1: adversarial pretraining on the whole training pool, no labels.

    Returns the discriminator tagged ``phase1`` and the per-iteration loss
    curve ``(iteration, loss_real, loss_fake, loss_gen)``. The validation and
    test pools are never touched. The body runs under a label audit and
    raises if anything dereferenced a label.
    """
    pool = split.train_unlabelled + split.train_labelled
    if not pool:
        raise ValueError("phase-1 training pool is empty")
    with label_audit() as audit:
        images = _stack_inputs(pool, use_sobel, cache)
        gen, disc = init_models(config.seed)
        opt_g = init_adam(gen.tensors, config.lr_g, config.beta1, config.beta2)
        opt_d = init_adam(disc.tensors, config.lr_d, config.beta1, config.beta2)
        rng_shuffle = _rng(config.seed, _SALT_PHASE1_SHUFFLE)
        rng_noise = _rng(config.seed, _SALT_PHASE1_NOISE)
        rng_dropout = _rng(config.seed, _SALT_PHASE1_DROPOUT)
        batches = _batch_indices(len(pool), config.batch_size, rng_shuffle)
        curve: list[tuple[int, float, float, float]] = []
        for iteration in range(1, config.iterations + 1):
            idx = next(batches)
            losses = gan_train_step(
                images[idx], gen, disc, opt_g, opt_d, rng_noise, rng_dropout
            )
            curve.append((iteration, *losses))
    if audit.count != 0:
        raise RuntimeError(
            f"phase-1 training dereferenced {audit.count} label(s); "
            "the unsupervised phase must not see labels"
        )
    if curve_path is not None:
        write_curve_csv(
            curve_path, ["iteration", "loss_real", "loss_fake", "loss_gen"], curve
        )
    if generator_out is not None:
        generator_out.append(gen)
    return disc, curve


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def _eval_bce(model: ModelParams, x: np.ndarray, y: np.ndarray) -> float:
    p = predict_proba(model, x)
    pc = np.clip(p, ad.BCE_CLAMP, 1.0 - ad.BCE_CLAMP)
    return float(-np.mean(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)))


def _eval_accuracy(model: ModelParams, x: np.ndarray, y: np.ndarray) -> float:
    p = predict_proba(model, x)
    return float(np.mean((p > DECISION_THRESHOLD).astype(np.float64) == y))


def supervised_loop(
    model: ModelParams,
    x_train: np.ndarray,
    y_train: np.ndarray,
    x_val: np.ndarray,
    y_val: np.ndarray,
    config: TrainConfig,
    learning_rate: float,
    shuffle_salt: int,
    dropout_salt: int,
    track_accuracy: bool = False,
) -> tuple[ModelParams, list[tuple]]:
    """Shared supervised trainer with early stopping on validation loss.

    Trains ``model`` in place through at most ``finetune_epochs_max`` epochs;
    stops once validation loss has failed to improve for
    ``early_stop_patience`` consecutive epochs and returns a copy of the
    parameters from the best epoch. Curve rows are
    ``(epoch, train_loss, val_loss)`` plus train/validation accuracy when
    ``track_accuracy`` is set.
    """
    opt = init_adam(model.tensors, learning_rate, config.beta1, config.beta2)
    rng_shuffle = _rng(config.seed, shuffle_salt)
    rng_dropout = _rng(config.seed, dropout_salt)
    n = x_train.shape[0]
    best_val = np.inf
    best_tensors = {k: t.data.copy() for k, t in model.tensors.items()}
    bad_epochs = 0
    curve: list[tuple] = []
    for epoch in range(1, config.finetune_epochs_max + 1):
        loss_sum = 0.0
        for idx in _epoch_batches(n, config.batch_size, rng_shuffle):
            ad.zero_grad(model.tensors)
            with Tape() as tape:
                p = discriminator_prob(model, x_train[idx], train=True, rng=rng_dropout)
                loss = ad.bce_loss(p, y_train[idx])
                ad.backward(loss, tape)
            adam_step(model.tensors, opt)
            loss_sum += float(loss.data) * len(idx)
        train_loss = loss_sum / n
        val_loss = _eval_bce(model, x_val, y_val)
        if track_accuracy:
            curve.append(
                (
                    epoch,
                    train_loss,
                    val_loss,
                    _eval_accuracy(model, x_train, y_train),
                    _eval_accuracy(model, x_val, y_val),
                )
            )
        else:
            curve.append((epoch, train_loss, val_loss))
        if val_loss < best_val:
            best_val = val_loss
            best_tensors = {k: t.data.copy() for k, t in model.tensors.items()}
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.early_stop_patience:
                break
    for k, t in model.tensors.items():
        t.data = best_tensors[k]
    return model, curve


def _labels_of(samples: list[Sample]) -> np.ndarray:
    labels = []
    for s in samples:
        if s.label is None:
            raise ValueError(f"sample '{s.id}' has no label for supervised training")
        labels.append(s.label)
    return np.array(labels, dtype=np.float64)


def supervised_finetune(
    phase1_disc: ModelParams,
    split: DatasetSplit,
    config: TrainConfig,
    use_sobel: bool = True,
    curve_path: Path | None = None,
    cache: dict[str, np.ndarray] | None = None,
) -> tuple[ModelParams, list[tuple[int, float, float]]]:
    """Phase 2: supervised fine-tuning of all discriminator layers.

    The sigmoid unit that judged real/fake now reads as the probability of
    the positive class. Returns the parameters from the best validation
    epoch, tagged ``phase2``, and the per-epoch loss curve.
    """
    if phase1_disc.role != "discriminator":
        raise ValueError(f"fine-tuning expects a discriminator, got {phase1_disc.role!r}")
    if not split.train_labelled:
        raise ValueError(
            "no labelled training samples: semi-supervision still needs a labelled pool"
        )
    if not split.validation:
        raise ValueError("fine-tuning needs a validation pool for early stopping")
    model = phase1_disc.copy(phase="phase2")
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
        _SALT_PHASE2_SHUFFLE,
        _SALT_PHASE2_DROPOUT,
    )
    if curve_path is not None:
        write_curve_csv(curve_path, ["epoch", "train_loss", "val_loss"], curve)
    return model, curve


_PREDICT_CHUNK = 64


def predict_proba(model: ModelParams, inputs: np.ndarray) -> np.ndarray:
    """Positive-class probabilities for a batch, eval mode, no phase check.

    Large batches run in chunks to bound the convolution workspace.
    """
    arr = np.asarray(inputs, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[1:] != (1, 100, 100):
        raise ValueError(f"inputs must be (N, 1, 100, 100), got {arr.shape}")
    chunks = [
        discriminator_prob(model, arr[i : i + _PREDICT_CHUNK], train=False).data
        for i in range(0, arr.shape[0], _PREDICT_CHUNK)
    ]
    return np.concatenate(chunks)


def classify(model: ModelParams, image_input: np.ndarray) -> tuple[int, float]:
    """Label one preprocessed image; only phase-2 classifiers are accepted.

    Returns ``(label, probability)`` where the label is 1 exactly when the
    probability strictly exceeds 0.5.
    """
    if model.role not in ("discriminator", "cnn"):
        raise ValueError(f"cannot classify with role {model.role!r}")
    if model.phase != "phase2":
        raise ValueError(
            "cannot classify with a phase-1 checkpoint: the head still encodes "
            "real/fake, run supervised fine-tuning first"
        )
    p = float(predict_proba(model, np.asarray(image_input))[0])
    return (1 if p > DECISION_THRESHOLD else 0), p


def uncertainty_score(probability: float) -> float:
    """Distance-from-decision confidence gap: 1 at p=0.5, 0 at p in {0, 1}."""
    if not 0.0 <= probability <= 1.0:
        raise ValueError(f"probability must lie in [0, 1], got {probability}")
    return 1.0 - 2.0 * abs(probability - DECISION_THRESHOLD)


def evaluate_probabilities(
    model: ModelParams,
    samples: list[Sample],
    use_sobel: bool = True,
    cache: dict[str, np.ndarray] | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Scores, hard predictions, truths and mean loss on labelled samples."""
    if not samples:
        raise ValueError("cannot evaluate on an empty sample list")
    x = _stack_inputs(samples, use_sobel, cache)
    y = _labels_of(samples)
    scores = predict_proba(model, x)
    preds = (scores > DECISION_THRESHOLD).astype(np.int64)
    pc = np.clip(scores, ad.BCE_CLAMP, 1.0 - ad.BCE_CLAMP)
    loss = float(-np.mean(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)))
    return scores, preds, y.astype(np.int64), loss
