"""Frame-level classification metrics and text-level edit distance."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .labels import NUM_CLASSES, KeyClass


class EmptyMatrix(ValueError):
    pass


class EmptyReference(ValueError):
    pass


def confusion_matrix(true, pred, num_classes: int = NUM_CLASSES) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    true = np.asarray(true, dtype=np.int64).ravel()
    pred = np.asarray(pred, dtype=np.int64).ravel()
    if true.shape != pred.shape:
        raise ValueError("true and predicted labels differ in length")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (true, pred), 1)
    return cm


@dataclass
class ClassMetrics:
    recall: np.ndarray  # nan where undefined
    precision: np.ndarray
    f1: np.ndarray
    macro_recall: float
    macro_precision: float
    macro_f1: float


def per_class_metrics(cm) -> ClassMetrics:
    """Per-class recall/precision/F1 and their macro averages.

    Classes whose row or column is empty have an undefined metric; they are
    left as nan and excluded from the corresponding macro average.
    """
    cm = np.asarray(cm, dtype=np.float64)
    if cm.sum() <= 0:
        raise EmptyMatrix("confusion matrix has no counts")
    diag = np.diag(cm)
    rows, cols = cm.sum(axis=1), cm.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        recall = np.where(rows > 0, diag / rows, np.nan)
        precision = np.where(cols > 0, diag / cols, np.nan)
        denom = recall + precision
        f1 = np.where(denom > 0, 2 * recall * precision / denom, np.where(np.isnan(denom), np.nan, 0.0))

    excluded = [KeyClass(i).name if cm.shape[0] == NUM_CLASSES else str(i)
                for i in np.flatnonzero(np.isnan(recall) | np.isnan(precision))]
    if excluded:
        warnings.warn(f"classes without samples excluded from macro averages: {excluded}",
                      stacklevel=2)
    return ClassMetrics(
        recall, precision, f1,
        float(np.nanmean(recall)), float(np.nanmean(precision)), float(np.nanmean(f1)),
    )


def levenshtein(a: str, b: str) -> int:
    """Minimum number of single-character insertions, deletions and substitutions."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def nld(reference: str, identified: str) -> float:
    """1 - LD(T, I) / len(T); not clamped, so it can go negative."""
    if not reference:
        raise EmptyReference("reference text is empty")
    return 1.0 - levenshtein(reference, identified) / len(reference)


def write_metrics_csv(path, metrics: ClassMetrics) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "recall", "precision", "f1"])
        for i in range(len(metrics.recall)):
            name = KeyClass(i).name if len(metrics.recall) == NUM_CLASSES else str(i)
            writer.writerow([name, metrics.recall[i], metrics.precision[i], metrics.f1[i]])
        writer.writerow(["macro", metrics.macro_recall, metrics.macro_precision, metrics.macro_f1])


def write_nld_csv(path, rows) -> None:
    """``rows`` are (session, wpm, nld) triples."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["session", "wpm", "nld"])
        for session, wpm, value in rows:
            writer.writerow([session, wpm, value])
