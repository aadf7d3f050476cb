"""Precision/recall/F1 scoring, confusion matrices, and report files.

Scores are reported in percent. Division-by-zero cases (empty row, empty
column, precision+recall both zero) score 0 by convention, and classes
absent from a run still contribute their zero to the mean so that scores
from small runs stay comparable to full runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .labels import FINE_CLASSES, RULE_CLASSES, fine_id_to_rule_id
from .network import forward


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # (K, K) int64, rows = truth, cols = prediction
    class_names: tuple[str, ...]

    def __post_init__(self):
        k = len(self.class_names)
        if self.counts.shape != (k, k):
            raise ValueError("counts must be K x K for K class names")
        if self.counts.min(initial=0) < 0:
            raise ValueError("counts must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class EvalReport:
    class_names: tuple[str, ...]
    precision: np.ndarray  # percent
    recall: np.ndarray  # percent
    f1: np.ndarray  # percent
    mean_f1: float
    confusion: ConfusionMatrix
    n_samples: int


def confusion(preds, truths, class_names) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64)
    truths = np.asarray(truths, dtype=np.int64)
    if preds.shape != truths.shape or preds.ndim != 1:
        raise ValueError("preds and truths must be equal-length 1D sequences")
    k = len(class_names)
    if preds.size and (preds.min() < 0 or preds.max() >= k or truths.min() < 0 or truths.max() >= k):
        raise ValueError(f"class ids must lie in [0, {k})")
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (truths, preds), 1)
    return ConfusionMatrix(counts=counts, class_names=tuple(class_names))


def f1_scores(cm: ConfusionMatrix) -> EvalReport:
    """Per-class precision/recall and F1 = 2pr/(p+r) x 100, 0 where undefined."""
    counts = cm.counts.astype(np.float64)
    diag = np.diag(counts)
    col = counts.sum(axis=0)
    row = counts.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(col > 0, diag / np.maximum(col, 1), 0.0)
        recall = np.where(row > 0, diag / np.maximum(row, 1), 0.0)
        pr = precision + recall
        f1 = np.where(pr > 0, 2.0 * precision * recall / np.maximum(pr, 1e-300), 0.0) * 100.0
    return EvalReport(
        class_names=cm.class_names,
        precision=precision * 100.0,
        recall=recall * 100.0,
        f1=f1,
        mean_f1=float(f1.mean()),
        confusion=cm,
        n_samples=cm.total,
    )


def merge_to_rule_classes(truths) -> np.ndarray:
    """Fold 7-class ids onto the 5 rule classes (bush, cyclist -> unknown)."""
    truths = np.asarray(truths, dtype=np.int64)
    table = np.array([fine_id_to_rule_id(i) for i in range(len(FINE_CLASSES))])
    return table[truths]


def evaluate_params(params, data, labels, class_names, batch_size=64) -> EvalReport:
    """Run the network over a labeled tensor set and score it.

    Argmax ties resolve to the lowest class id, so evaluation is
    deterministic regardless of batch split.
    """
    data = np.asarray(data, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    preds = np.empty(len(data), dtype=np.int64)
    for lo in range(0, len(data), batch_size):
        probs = forward(params, data[lo : lo + batch_size])
        preds[lo : lo + probs.shape[0]] = probs.argmax(axis=1)
    return f1_scores(confusion(preds, labels, class_names))


def classifier_report(preds, truths, class_names) -> EvalReport:
    """Score already-computed predictions (rule classifier path)."""
    return f1_scores(confusion(preds, truths, class_names))


# ----------------------------------------------------------------- reports


def report_table(report: EvalReport) -> str:
    """Aligned text table: one row per class, then the class mean."""
    width = max(len(n) for n in report.class_names)
    width = max(width, len("mean f1"))
    lines = [f"{'class':<{width}}  {'precision':>9}  {'recall':>9}  {'f1':>9}"]
    for i, name in enumerate(report.class_names):
        lines.append(
            f"{name:<{width}}  {report.precision[i]:>9.1f}  "
            f"{report.recall[i]:>9.1f}  {report.f1[i]:>9.1f}"
        )
    lines.append(f"{'mean f1':<{width}}  {'':>9}  {'':>9}  {report.mean_f1:>9.1f}")
    lines.append(f"samples: {report.n_samples}")
    return "\n".join(lines) + "\n"


def report_csv(report: EvalReport) -> str:
    """Machine-readable per-class scores: class,precision,recall,f1."""
    lines = ["class,precision,recall,f1"]
    for i, name in enumerate(report.class_names):
        lines.append(
            f"{name},{report.precision[i]:.6f},{report.recall[i]:.6f},{report.f1[i]:.6f}"
        )
    lines.append(f"mean,,,{report.mean_f1:.6f}")
    return "\n".join(lines) + "\n"


def confusion_csv(cm: ConfusionMatrix) -> str:
    """CSV grid, first column the truth class, one column per prediction."""
    lines = ["truth\\pred," + ",".join(cm.class_names)]
    for i, name in enumerate(cm.class_names):
        lines.append(name + "," + ",".join(str(int(c)) for c in cm.counts[i]))
    return "\n".join(lines) + "\n"


RULE_CLASS_NAMES = RULE_CLASSES
FINE_CLASS_NAMES = FINE_CLASSES
