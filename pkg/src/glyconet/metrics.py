"""Multi-class evaluation: confusion matrix, macro scores, one-vs-rest PR-AUC.

Macro averages run over classes that actually occur in the reference labels;
absent classes are excluded with a warning rather than averaged in as zeros.
PR-AUC is the step-wise (non-interpolated) area, with tied scores collapsed
into one operating point.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)


def confusion_matrix(y_true: np.ndarray, y_pred: np.ndarray, n_classes: int) -> np.ndarray:
    """Counts with true class on rows and predicted class on columns."""
    t = np.asarray(y_true, dtype=np.int64)
    p = np.asarray(y_pred, dtype=np.int64)
    if t.shape != p.shape:
        raise ValueError("label arrays differ in length")
    if t.size and (t.min() < 0 or t.max() >= n_classes or p.min() < 0 or p.max() >= n_classes):
        raise ValueError(f"labels outside [0, {n_classes})")
    flat = np.bincount(t * n_classes + p, minlength=n_classes * n_classes)
    return flat.reshape(n_classes, n_classes)


def per_class_rates(matrix: np.ndarray) -> dict[str, np.ndarray]:
    """Recall, precision, F1 and support per class from a confusion matrix.

    A class nobody predicted gets precision 0; a class with no true samples
    gets NaN everywhere and is skipped by the macro averages.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    support = matrix.sum(axis=1)
    predicted = matrix.sum(axis=0)
    diag = np.diag(matrix)
    recall = np.where(support > 0, diag / np.where(support > 0, support, 1.0), np.nan)
    precision = np.where(predicted > 0, diag / np.where(predicted > 0, predicted, 1.0), 0.0)
    precision = np.where(support > 0, precision, np.nan)
    both = precision + recall
    f1 = np.where(np.nan_to_num(both) > 0, 2.0 * precision * recall / np.where(both > 0, both, 1.0), 0.0)
    f1 = np.where(support > 0, f1, np.nan)
    return {"recall": recall, "precision": precision, "f1": f1,
            "support": support.astype(np.int64)}


def _macro(values: np.ndarray, support: np.ndarray, name: str) -> float:
    present = support > 0
    if not present.any():
        raise ValueError("no class has any true sample")
    if not present.all():
        absent = np.flatnonzero(~present).tolist()
        logger.warning("macro %s excludes classes with zero support: %s", name, absent)
    return float(np.mean(values[present]))


def average_precision(y_true: np.ndarray, scores: np.ndarray) -> float:
    """Step-wise area under the precision-recall curve for one binary task.

    Samples are taken in descending score order; tied scores enter together
    as a single threshold. AP = sum over thresholds of
    (recall_i - recall_{i-1}) * precision_i.
    """
    y = np.asarray(y_true).astype(bool)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("average precision is undefined without positives")
    order = np.argsort(-s, kind="stable")
    y_sorted = y[order]
    s_sorted = s[order]
    cut = np.flatnonzero(np.diff(s_sorted) != 0)
    cut = np.append(cut, y.size - 1)          # inclusive end of each tie group
    tp = np.cumsum(y_sorted)[cut].astype(np.float64)
    precision = tp / (cut + 1.0)
    recall = tp / n_pos
    prev = np.concatenate(([0.0], recall[:-1]))
    return float(np.sum((recall - prev) * precision))


def pr_auc_per_class(y_true: np.ndarray, probs: np.ndarray) -> tuple[list[float], float]:
    """One-vs-rest AP per class plus the macro mean over supported classes."""
    y = np.asarray(y_true, dtype=np.int64)
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] != y.size:
        raise ValueError("probability matrix must be (n_samples, n_classes)")
    n_classes = probs.shape[1]
    per_class: list[float] = []
    present: list[float] = []
    for c in range(n_classes):
        mask = y == c
        if not mask.any():
            logger.warning("PR-AUC skips class %d with zero support", c)
            per_class.append(float("nan"))
            continue
        ap = average_precision(mask, probs[:, c])
        per_class.append(ap)
        present.append(ap)
    if not present:
        raise ValueError("no class has any true sample")
    return per_class, float(np.mean(present))


@dataclass
class MetricsReport:
    """Everything the evaluate/compare commands print or persist."""

    n_samples: int
    n_classes: int
    confusion: np.ndarray
    recall: np.ndarray
    precision: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    macro_recall: float
    macro_precision: float
    macro_f1: float
    pr_auc: list[float] | None = None
    macro_pr_auc: float | None = None

    def to_dict(self) -> dict:
        def roundtrip(arr):
            return [None if np.isnan(v) else float(v) for v in np.asarray(arr, np.float64)]
        doc = {
            "confusion": self.confusion.astype(int).tolist(),
            "f1": roundtrip(self.f1),
            "macro_f1": self.macro_f1,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "n_classes": self.n_classes,
            "n_samples": self.n_samples,
            "precision": roundtrip(self.precision),
            "recall": roundtrip(self.recall),
            "support": self.support.astype(int).tolist(),
        }
        if self.pr_auc is not None:
            doc["pr_auc"] = roundtrip(self.pr_auc)
            doc["macro_pr_auc"] = self.macro_pr_auc
        return doc


def evaluate_predictions(y_true: np.ndarray, y_pred: np.ndarray, n_classes: int,
                         probs: np.ndarray | None = None) -> MetricsReport:
    matrix = confusion_matrix(y_true, y_pred, n_classes)
    rates = per_class_rates(matrix)
    support = rates["support"]
    report = MetricsReport(
        n_samples=int(np.asarray(y_true).size),
        n_classes=n_classes,
        confusion=matrix,
        recall=rates["recall"],
        precision=rates["precision"],
        f1=rates["f1"],
        support=support,
        macro_recall=_macro(rates["recall"], support, "recall"),
        macro_precision=_macro(rates["precision"], support, "precision"),
        macro_f1=_macro(rates["f1"], support, "f1"),
    )
    if probs is not None:
        per_class, macro = pr_auc_per_class(y_true, probs)
        report.pr_auc = per_class
        report.macro_pr_auc = macro
    return report


def write_metrics_json(path, report: MetricsReport) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
