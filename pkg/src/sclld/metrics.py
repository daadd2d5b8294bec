"""Classification metrics, ROC/AUC, and their CSV / text renderings.

The positive class is the condition of interest (label 1). Every ratio
guards its denominator: a metric whose denominator is zero is reported as
undefined (``None`` in memory, the literal ``undefined`` in CSV cells)
rather than silently coerced to 0 or 1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self) -> None:
        for name in ("tp", "fp", "tn", "fn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class MetricsReport:
    """Scalar summary of one evaluation; ``None`` marks undefined entries."""

    accuracy: float | None
    precision: float | None
    recall: float | None
    specificity: float | None
    f1: float | None
    loss: float | None
    auc: float | None
    counts: ConfusionCounts


@dataclass
class RocCurve:
    """Operating points swept over distinct scores, (0,0) through (1,1)."""

    fpr: np.ndarray
    tpr: np.ndarray


def confusion_counts(predictions: Sequence[int], truths: Sequence[int]) -> ConfusionCounts:
    preds = np.asarray(predictions)
    ys = np.asarray(truths)
    if preds.shape != ys.shape or preds.ndim != 1:
        raise ValueError(
            f"predictions and truths must be matching 1-d sequences, "
            f"got {preds.shape} and {ys.shape}"
        )
    for arr, name in ((preds, "predictions"), (ys, "truths")):
        if not np.all(np.isin(arr, (0, 1))):
            raise ValueError(f"{name} must contain only 0/1 values")
    tp = int(np.sum((preds == 1) & (ys == 1)))
    fp = int(np.sum((preds == 1) & (ys == 0)))
    tn = int(np.sum((preds == 0) & (ys == 0)))
    fn = int(np.sum((preds == 0) & (ys == 1)))
    return ConfusionCounts(tp, fp, tn, fn)


def _ratio(num: int, den: int) -> float | None:
    return None if den == 0 else num / den


def compute_metrics(
    counts: ConfusionCounts,
    losses: Sequence[float] | None = None,
    scores: Sequence[float] | None = None,
    truths: Sequence[int] | None = None,
) -> MetricsReport:
    """Derive the scalar metrics from confusion counts.

    ``losses`` (per-sample or pre-averaged) fills the loss column with its
    mean. ``scores`` with ``truths`` adds AUC; a single-class truth set
    leaves AUC undefined instead of failing.
    """
    accuracy = _ratio(counts.tp + counts.tn, counts.total)
    precision = _ratio(counts.tp, counts.tp + counts.fp)
    recall = _ratio(counts.tp, counts.tp + counts.fn)
    specificity = _ratio(counts.tn, counts.tn + counts.fp)
    if precision is None or recall is None or precision + recall == 0.0:
        f1 = None
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    loss = None
    if losses is not None:
        arr = np.asarray(losses, dtype=np.float64)
        if arr.size == 0:
            raise ValueError("losses sequence is empty")
        loss = float(arr.mean())
    auc = None
    if scores is not None:
        if truths is None:
            raise ValueError("scores without truths: AUC needs both")
        ys = np.asarray(truths)
        if len(set(ys.tolist())) == 2:
            _, auc = roc_auc(scores, truths)
    return MetricsReport(accuracy, precision, recall, specificity, f1, loss, auc, counts)


def roc_auc(scores: Sequence[float], truths: Sequence[int]) -> tuple[RocCurve, float]:
    """ROC curve and its trapezoidal area.

    The threshold sweeps the distinct scores in descending order, with tied
    scores entering as one group; this makes the trapezoid rule equal to the
    Mann-Whitney statistic with ties counted half.
    """
    s = np.asarray(scores, dtype=np.float64)
    ys = np.asarray(truths)
    if s.shape != ys.shape or s.ndim != 1 or s.size == 0:
        raise ValueError(
            f"scores and truths must be matching non-empty 1-d sequences, "
            f"got {s.shape} and {ys.shape}"
        )
    if not np.all(np.isin(ys, (0, 1))):
        raise ValueError("truths must contain only 0/1 values")
    n_pos = int(np.sum(ys == 1))
    n_neg = int(np.sum(ys == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: truths contain a single class")
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = ys[order]
    fpr = [0.0]
    tpr = [0.0]
    tp = fp = 0
    i = 0
    n = s.size
    while i < n:
        j = i
        while j < n and s_sorted[j] == s_sorted[i]:
            j += 1
        tp += int(np.sum(y_sorted[i:j] == 1))
        fp += int(np.sum(y_sorted[i:j] == 0))
        fpr.append(fp / n_neg)
        tpr.append(tp / n_pos)
        i = j
    fpr_arr = np.array(fpr)
    tpr_arr = np.array(tpr)
    auc = float(np.sum(np.diff(fpr_arr) * (tpr_arr[1:] + tpr_arr[:-1]) / 2.0))
    return RocCurve(fpr_arr, tpr_arr), auc


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

METRICS_COLUMNS = ["accuracy", "precision", "recall", "specificity", "f1", "loss", "auc"]

UNDEFINED = "undefined"


def _cell(value: float | None) -> str:
    return UNDEFINED if value is None else repr(float(value))


def metrics_csv_text(report: MetricsReport) -> str:
    values = [getattr(report, col) for col in METRICS_COLUMNS]
    return (
        ",".join(METRICS_COLUMNS) + "\n" + ",".join(_cell(v) for v in values) + "\n"
    )


def write_metrics_csv(report: MetricsReport, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(metrics_csv_text(report))


def read_metrics_csv(path: Path) -> dict[str, float | None]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) != 2 or rows[0] != METRICS_COLUMNS:
        raise ValueError(f"malformed metrics CSV {path}")
    return {
        col: (None if cell == UNDEFINED else float(cell))
        for col, cell in zip(METRICS_COLUMNS, rows[1])
    }


def _percent(value: float | None) -> str:
    return UNDEFINED if value is None else f"{100.0 * value:.2f}%"


def metrics_text(report: MetricsReport) -> str:
    """Human-readable summary; percentages carry two decimal places."""
    c = report.counts
    lines = [
        f"samples:     {c.total}",
        f"confusion:   tp={c.tp} fp={c.fp} tn={c.tn} fn={c.fn}",
        f"accuracy:    {_percent(report.accuracy)}",
        f"precision:   {_percent(report.precision)}",
        f"recall:      {_percent(report.recall)}",
        f"specificity: {_percent(report.specificity)}",
        f"f1:          {_percent(report.f1)}",
        f"loss:        {UNDEFINED if report.loss is None else f'{report.loss:.6f}'}",
        f"auc:         {UNDEFINED if report.auc is None else f'{report.auc:.4f}'}",
    ]
    return "\n".join(lines) + "\n"


def write_roc_csv(curve: RocCurve, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["fpr", "tpr"])
        for f, t in zip(curve.fpr, curve.tpr):
            writer.writerow([repr(float(f)), repr(float(t))])
