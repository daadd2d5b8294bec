"""End-to-end experiment harness gluing the pieces together.

``run_experiment`` drives one method on one corpus: resolve the corpus
(loading a manifest or generating synthetic frames), partition it, train,
evaluate on the test pool, and write every artifact (checkpoints, curve
CSVs, metrics CSV/text, ROC CSV, figures, a JSON run record) under the
configured output directory. Identical configurations rewrite identical
bytes for checkpoints and delimited outputs; only the recorded wall-clock
duration differs between reruns.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import figures
from .baselines import (
    DEFAULT_GP_GRID,
    GPModel,
    cnn_train_supervised,
    gp_fit_laplace,
    gp_predict_batch,
    gp_select_hyperparameters,
    gp_training_matrix,
    save_gp,
)
from .checkpoint import save_checkpoint
from .config import ExperimentConfig, config_from_dict
from .dataset import (
    DatasetSplit,
    Sample,
    generate_synthetic,
    load_manifest,
    partition_dataset,
)
from .gradcam import gradcam
from .imaging import GrayImage, preprocess_image, read_pgm, sobel_magnitude, write_pgm
from .metrics import (
    MetricsReport,
    RocCurve,
    compute_metrics,
    confusion_counts,
    metrics_text,
    roc_auc,
    write_metrics_csv,
    write_roc_csv,
)
from .networks import ModelParams
from .training import (
    evaluate_probabilities,
    load_preprocessed,
    supervised_finetune,
    unsupervised_train,
    write_curve_csv,
)

SWEEP_COLUMNS = [
    "fraction",
    "accuracy",
    "precision",
    "recall",
    "specificity",
    "f1",
    "loss",
    "auc",
    "duration",
]


def format_duration(delta: dt.timedelta) -> str:
    """Render a timedelta as H:MM:SS.ffffff (hours unpadded, no days field)."""
    total = delta.total_seconds()
    if total < 0:
        raise ValueError(f"duration cannot be negative, got {delta}")
    micros = round(total * 1_000_000)
    seconds, micros = divmod(micros, 1_000_000)
    minutes, seconds = divmod(seconds, 60)
    hours, minutes = divmod(minutes, 60)
    return f"{hours}:{minutes:02d}:{seconds:02d}.{micros:06d}"


def parse_duration(text: str) -> dt.timedelta:
    parts = text.split(":")
    if len(parts) != 3:
        raise ValueError(f"duration must look like H:MM:SS.ffffff, got {text!r}")
    hours = int(parts[0])
    minutes = int(parts[1])
    seconds = float(parts[2])
    if not 0 <= minutes < 60 or not 0.0 <= seconds < 60.0:
        raise ValueError(f"duration fields out of range in {text!r}")
    return dt.timedelta(hours=hours, minutes=minutes, seconds=seconds)


@dataclass
class RunRecord:
    """Everything a finished run leaves behind, in serializable form."""

    config: dict
    method: str
    duration: str
    metrics: dict
    artifacts: dict[str, str] = field(default_factory=dict)

    def to_json(self) -> str:
        return (
            json.dumps(
                {
                    "config": self.config,
                    "method": self.method,
                    "duration": self.duration,
                    "metrics": self.metrics,
                    "artifacts": self.artifacts,
                },
                indent=2,
            )
            + "\n"
        )


def resolve_corpus(config: ExperimentConfig, out_dir: Path) -> list[Sample]:
    """Load the manifest, or synthesize the corpus under the run directory."""
    count = config.synthetic_count()
    if count is not None:
        samples, _ = generate_synthetic(count, config.seed, out_dir / "corpus")
        return samples
    return load_manifest(Path(config.corpus))


def _evaluate_scores(
    scores: np.ndarray, preds: np.ndarray, truths: np.ndarray, loss: float | None
) -> tuple[MetricsReport, RocCurve | None]:
    counts = confusion_counts(preds, truths)
    report = compute_metrics(
        counts,
        losses=None if loss is None else [loss],
        scores=scores,
        truths=truths,
    )
    curve = None
    if report.auc is not None:
        curve, _ = roc_auc(scores, truths)
    return report, curve


def _write_eval_artifacts(
    report: MetricsReport, curve: RocCurve | None, out_dir: Path, artifacts: dict[str, str]
) -> None:
    write_metrics_csv(report, out_dir / "metrics.csv")
    (out_dir / "metrics.txt").write_text(metrics_text(report))
    artifacts["metrics_csv"] = "metrics.csv"
    artifacts["metrics_text"] = "metrics.txt"
    if curve is not None:
        write_roc_csv(curve, out_dir / "roc.csv")
        figures.plot_roc(curve.fpr, curve.tpr, report.auc, out_dir / "roc.png")
        artifacts["roc_csv"] = "roc.csv"
        artifacts["roc_figure"] = "roc.png"


def run_experiment(config: ExperimentConfig) -> RunRecord:
    """Execute one configured run and write its artifact tree.

    Returns the run record, which is also saved as ``run_record.json`` in
    the output directory.
    """
    started = dt.datetime.now()
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(config.to_json())
    artifacts: dict[str, str] = {"config": "config.json"}

    samples = resolve_corpus(config, out_dir)
    split = partition_dataset(samples, config.labelled_fraction, config.seed)
    train_config = config.train_config()
    cache: dict[str, np.ndarray] = {}

    if config.method in ("sclld", "gan-only"):
        disc, phase1_curve = unsupervised_train(
            split,
            train_config,
            use_sobel=config.sobel,
            curve_path=out_dir / "phase1_curve.csv",
            cache=cache,
        )
        save_checkpoint(disc, out_dir / "discriminator_phase1.ckpt")
        figures.plot_phase1_curves(phase1_curve, out_dir / "phase1_loss.png")
        artifacts["phase1_curve"] = "phase1_curve.csv"
        artifacts["phase1_figure"] = "phase1_loss.png"
        artifacts["phase1_checkpoint"] = "discriminator_phase1.ckpt"
        if config.method == "sclld":
            model, phase2_curve = supervised_finetune(
                disc,
                split,
                train_config,
                use_sobel=config.sobel,
                curve_path=out_dir / "phase2_curve.csv",
                cache=cache,
            )
            save_checkpoint(model, out_dir / "discriminator_phase2.ckpt")
            figures.plot_phase2_curve(phase2_curve, out_dir / "phase2_loss.png")
            artifacts["phase2_curve"] = "phase2_curve.csv"
            artifacts["phase2_figure"] = "phase2_loss.png"
            artifacts["phase2_checkpoint"] = "discriminator_phase2.ckpt"
        else:
            # The raw real/fake head doubles as the score: no fine-tuning.
            model = disc
        scores, preds, truths, loss = evaluate_probabilities(
            model, split.test, use_sobel=config.sobel, cache=cache
        )
    elif config.method == "cnn":
        model, cnn_curve = cnn_train_supervised(
            split,
            train_config,
            use_sobel=config.sobel,
            curve_path=out_dir / "cnn_curve.csv",
            cache=cache,
        )
        save_checkpoint(model, out_dir / "cnn.ckpt")
        figures.plot_cnn_curves(cnn_curve, out_dir / "cnn_curves.png")
        artifacts["cnn_curve"] = "cnn_curve.csv"
        artifacts["cnn_figure"] = "cnn_curves.png"
        artifacts["cnn_checkpoint"] = "cnn.ckpt"
        scores, preds, truths, loss = evaluate_probabilities(
            model, split.test, use_sobel=config.sobel, cache=cache
        )
    elif config.method == "gp":
        gp_model, scores, preds, truths, loss = _run_gp(split, config, cache, out_dir, artifacts)
    else:  # pragma: no cover - config validation rejects unknown methods
        raise ValueError(f"unhandled method {config.method!r}")

    report, curve = _evaluate_scores(scores, preds, truths, loss)
    _write_eval_artifacts(report, curve, out_dir, artifacts)

    duration = format_duration(dt.datetime.now() - started)
    record = RunRecord(
        config=config.to_dict(),
        method=config.method,
        duration=duration,
        metrics={
            "accuracy": report.accuracy,
            "precision": report.precision,
            "recall": report.recall,
            "specificity": report.specificity,
            "f1": report.f1,
            "loss": report.loss,
            "auc": report.auc,
        },
        artifacts=artifacts,
    )
    (out_dir / "run_record.json").write_text(record.to_json())
    return record


def _run_gp(
    split: DatasetSplit,
    config: ExperimentConfig,
    cache: dict[str, np.ndarray],
    out_dir: Path,
    artifacts: dict[str, str],
) -> tuple[GPModel, np.ndarray, np.ndarray, np.ndarray, float]:
    x_train, y_train = gp_training_matrix(split.train_labelled, config.sobel, cache)
    hyper, scored = gp_select_hyperparameters(x_train, y_train, DEFAULT_GP_GRID)
    model = gp_fit_laplace(x_train, y_train, hyper)
    save_gp(model, out_dir / "gp_model.bin")
    write_curve_csv(
        out_dir / "gp_selection.csv",
        ["sigma_f", "sigma_n", "length_scale", "log_marginal"],
        [(h.sigma_f, h.sigma_n, h.length_scale, score) for h, score in scored],
    )
    artifacts["gp_model"] = "gp_model.bin"
    artifacts["gp_selection"] = "gp_selection.csv"
    x_test, y_test_pm = gp_training_matrix(split.test, config.sobel, cache)
    scores = gp_predict_batch(model, x_test)
    truths = ((y_test_pm + 1.0) / 2.0).astype(np.int64)
    preds = (scores > 0.5).astype(np.int64)
    pc = np.clip(scores, 1e-7, 1.0 - 1e-7)
    y = truths.astype(np.float64)
    loss = float(-np.mean(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)))
    return model, scores, preds, truths, loss


def sweep_labelled_fraction(
    base_config: ExperimentConfig, fractions: list[float]
) -> list[RunRecord]:
    """Rerun the configured method across labelled budgets.

    Each fraction gets its own subdirectory; a consolidated CSV and an
    accuracy figure land at the sweep root.
    """
    if not fractions:
        raise ValueError("sweep needs at least one labelled fraction")
    root = Path(base_config.out_dir)
    records: list[RunRecord] = []
    rows: list[tuple] = []
    merged = base_config.to_dict()
    for fraction in fractions:
        sub = dict(merged)
        sub["labelled_fraction"] = float(fraction)
        sub["out_dir"] = str(root / f"fraction_{fraction:g}")
        record = run_experiment(config_from_dict(sub))
        records.append(record)
        m = record.metrics
        rows.append(
            (
                float(fraction),
                *(m[k] if m[k] is not None else "undefined" for k in
                  ("accuracy", "precision", "recall", "specificity", "f1", "loss", "auc")),
                record.duration,
            )
        )
    write_curve_csv(root / "sweep.csv", SWEEP_COLUMNS, rows)
    defined = [
        (r[0], r[1]) for r in rows if isinstance(r[1], float)
    ]
    if defined:
        figures.plot_sweep([d[0] for d in defined], [d[1] for d in defined], root / "sweep_accuracy.png")
    return records


def emit_gradcam_gallery(
    model: ModelParams,
    samples: list[Sample],
    out_dir: Path,
    count: int,
    use_sobel: bool = True,
) -> list[Path]:
    """Write raw / edge-map / heatmap PGM triplets for ``count`` samples.

    Picks ``count / 2`` labelled samples per class in id order. A count of
    zero writes nothing and returns an empty list.
    """
    if count < 0 or count % 2 != 0:
        raise ValueError(f"gallery count must be even and non-negative, got {count}")
    if count == 0:
        return []
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    per_class = count // 2
    chosen: list[Sample] = []
    for class_id in (0, 1):
        pool = sorted(
            (s for s in samples if s.label == class_id), key=lambda s: s.id
        )
        if len(pool) < per_class:
            raise ValueError(
                f"gallery wants {per_class} samples of class {class_id}, "
                f"corpus only has {len(pool)} labelled"
            )
        chosen.extend(pool[:per_class])
    written: list[Path] = []
    triplets: list[tuple[str, GrayImage, GrayImage, GrayImage]] = []
    for sample in chosen:
        raw = read_pgm(Path(sample.image_path).read_bytes())
        edges = sobel_magnitude(raw)
        cam = gradcam(model, load_preprocessed(sample, use_sobel))
        display_raw = preprocess_image(raw, use_sobel=False)
        for suffix, image in (("raw", raw), ("sobel", edges), ("cam", cam)):
            path = out_dir / f"{sample.id}_{suffix}.pgm"
            path.write_bytes(write_pgm(image))
            written.append(path)
        triplets.append((sample.id, display_raw, edges, cam))
    figures.plot_gradcam_gallery(triplets, out_dir / "gallery.png")
    written.append(out_dir / "gallery.png")
    return written
