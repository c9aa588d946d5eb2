"""Evaluation metrics: accuracy, balanced accuracy, AUROC."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata


@dataclass(frozen=True)
class EvalReport:
    """Metrics on one evaluation set.

    ``balanced_accuracy``, ``auroc`` and the confusion counts are binary-only
    and None for multi-class tasks.
    """

    accuracy: float
    balanced_accuracy: float | None = None
    auroc: float | None = None
    tp: int | None = None
    tn: int | None = None
    fp: int | None = None
    fn: int | None = None


def accuracy(preds: np.ndarray, labels: np.ndarray) -> float:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValueError("length mismatch")
    return float(np.mean(preds == labels))


def confusion_counts(preds: np.ndarray, labels: np.ndarray):
    preds = np.asarray(preds).astype(np.int64)
    labels = np.asarray(labels).astype(np.int64)
    tp = int(np.sum((preds == 1) & (labels == 1)))
    tn = int(np.sum((preds == 0) & (labels == 0)))
    fp = int(np.sum((preds == 1) & (labels == 0)))
    fn = int(np.sum((preds == 0) & (labels == 1)))
    return tp, tn, fp, fn


def balanced_accuracy(preds: np.ndarray, labels: np.ndarray) -> float:
    """(TPR + TNR) / 2 for binary labels; errors if a class is absent."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValueError("length mismatch")
    tp, tn, fp, fn = confusion_counts(preds, labels)
    pos = tp + fn
    neg = tn + fp
    if pos == 0 or neg == 0:
        raise ValueError("balanced accuracy undefined: a class is absent")
    return 0.5 * (tp / pos + tn / neg)


def auroc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Area under the ROC curve via the Mann-Whitney rank statistic.

    Ties get mid-ranks, so the result equals the trapezoidal ROC area and is
    invariant under strictly monotone transforms of the scores.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError("length mismatch")
    pos = int(np.sum(labels == 1))
    neg = int(np.sum(labels == 0))
    if pos == 0 or neg == 0:
        raise ValueError("AUROC undefined: a class is absent")
    ranks = rankdata(scores, method="average")
    u = float(np.sum(ranks[labels == 1])) - pos * (pos + 1) / 2.0
    return u / (pos * neg)


def evaluate(model, w: np.ndarray, X: np.ndarray, y: np.ndarray) -> EvalReport:
    """Full report for binary models; accuracy only for multi-class."""
    preds = model.predict_labels(w, X)
    acc = accuracy(preds, y)
    if model.loss != "bce":
        return EvalReport(accuracy=acc)
    scores = model.predict_proba(w, X)
    tp, tn, fp, fn = confusion_counts(preds, y)
    return EvalReport(
        accuracy=acc,
        balanced_accuracy=balanced_accuracy(preds, y),
        auroc=auroc(scores, y),
        tp=tp,
        tn=tn,
        fp=fp,
        fn=fn,
    )
