"""Matplotlib renderings of the delimited outputs.

Every report CSV has a figure twin saved next to it: loss curves for both
training phases, the CNN baseline's loss/accuracy panels, the ROC curve, the
labelled-fraction sweep, and the heatmap gallery. All rendering goes through
the Agg backend so headless runs behave.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402 - backend must be pinned first

from .imaging import GrayImage  # noqa: E402

_DPI = 130


def _save(fig, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=_DPI, bbox_inches="tight")
    plt.close(fig)


def plot_phase1_curves(rows: list[tuple], path: Path) -> None:
    """Adversarial losses per iteration: real, fake, generator."""
    iterations = [r[0] for r in rows]
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    ax.plot(iterations, [r[1] for r in rows], label="discriminator (real)", lw=0.9)
    ax.plot(iterations, [r[2] for r in rows], label="discriminator (fake)", lw=0.9)
    ax.plot(iterations, [r[3] for r in rows], label="generator", lw=0.9)
    ax.set_xlabel("iteration")
    ax.set_ylabel("binary cross-entropy")
    ax.set_title("adversarial pretraining losses")
    ax.legend(frameon=False)
    ax.grid(alpha=0.3)
    _save(fig, path)


def plot_phase2_curve(rows: list[tuple], path: Path) -> None:
    """Fine-tuning train/validation loss per epoch."""
    epochs = [r[0] for r in rows]
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(epochs, [r[1] for r in rows], marker="o", ms=3, label="train")
    ax.plot(epochs, [r[2] for r in rows], marker="s", ms=3, label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("binary cross-entropy")
    ax.set_title("supervised fine-tuning losses")
    ax.legend(frameon=False)
    ax.grid(alpha=0.3)
    _save(fig, path)


def plot_cnn_curves(rows: list[tuple], path: Path) -> None:
    """Two panels for the supervised baseline: loss and accuracy."""
    epochs = [r[0] for r in rows]
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(10.0, 4.0))
    ax_loss.plot(epochs, [r[1] for r in rows], marker="o", ms=3, label="train")
    ax_loss.plot(epochs, [r[2] for r in rows], marker="s", ms=3, label="validation")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("binary cross-entropy")
    ax_loss.set_title("loss")
    ax_loss.legend(frameon=False)
    ax_loss.grid(alpha=0.3)
    ax_acc.plot(epochs, [r[3] for r in rows], marker="o", ms=3, label="train")
    ax_acc.plot(epochs, [r[4] for r in rows], marker="s", ms=3, label="validation")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("accuracy")
    ax_acc.set_title("accuracy")
    ax_acc.set_ylim(0.0, 1.02)
    ax_acc.legend(frameon=False)
    ax_acc.grid(alpha=0.3)
    fig.suptitle("supervised baseline training")
    _save(fig, path)


def plot_roc(fpr, tpr, auc: float | None, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(5.0, 5.0))
    label = "ROC" if auc is None else f"ROC (area {auc:.4f})"
    ax.plot(fpr, tpr, lw=1.4, label=label)
    ax.plot([0, 1], [0, 1], ls="--", lw=0.8, color="grey")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    ax.legend(frameon=False, loc="lower right")
    ax.grid(alpha=0.3)
    _save(fig, path)


def plot_sweep(fractions: list[float], accuracies: list[float], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot([100 * f for f in fractions], [100 * a for a in accuracies], marker="o")
    ax.set_xlabel("labelled share of training pool (%)")
    ax.set_ylabel("test accuracy (%)")
    ax.set_title("accuracy against labelled-data budget")
    ax.grid(alpha=0.3)
    _save(fig, path)


def plot_gradcam_gallery(
    triplets: list[tuple[str, GrayImage, GrayImage, GrayImage]], path: Path
) -> None:
    """Grid of raw image, edge map, and heatmap rows, one column per sample."""
    if not triplets:
        return
    cols = len(triplets)
    fig, axes = plt.subplots(3, cols, figsize=(2.2 * cols, 6.8), squeeze=False)
    row_titles = ("input", "edges", "activation")
    for col, (sample_id, raw, edges, cam) in enumerate(triplets):
        for row, img in enumerate((raw, edges, cam)):
            ax = axes[row][col]
            cmap = "inferno" if row == 2 else "gray"
            ax.imshow(img.pixels, cmap=cmap, interpolation="nearest")
            ax.set_xticks(())
            ax.set_yticks(())
            if col == 0:
                ax.set_ylabel(row_titles[row])
        axes[0][col].set_title(sample_id, fontsize=9)
    _save(fig, path)
