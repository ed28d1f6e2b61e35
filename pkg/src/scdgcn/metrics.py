"""Classification metrics: accuracy, weighted F1, one-vs-rest AUROC and per-class AUPRC."""

from __future__ import annotations

import numpy as np

from scdgcn.errors import ShapeError


def accuracy(y_true, y_pred) -> float:
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    return float(np.mean(y_true == y_pred)) if len(y_true) else 0.0


def f1_per_class(y_true, y_pred, num_classes: int) -> np.ndarray:
    """F1 of every class; 0 where precision + recall is 0."""
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    out = np.zeros(num_classes)
    for c in range(num_classes):
        tp = np.sum((y_pred == c) & (y_true == c))
        fp = np.sum((y_pred == c) & (y_true != c))
        fn = np.sum((y_pred != c) & (y_true == c))
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        out[c] = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return out


def weighted_f1(y_true, y_pred, num_classes: int) -> float:
    y_true = np.asarray(y_true)
    if len(y_true) == 0:
        return 0.0
    support = np.bincount(y_true, minlength=num_classes)[:num_classes]
    return float(np.sum(support / len(y_true) * f1_per_class(y_true, y_pred, num_classes)))


def _binary_curve(positive: np.ndarray, scores: np.ndarray):
    """Cumulative TP/FP counts at each distinct threshold, descending."""
    order = np.argsort(-scores, kind="mergesort")
    s, pos = scores[order], positive[order]
    tp = np.cumsum(pos)
    fp = np.cumsum(~pos)
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    return tp[last].astype(np.float64), fp[last].astype(np.float64)


def binary_auroc(positive, scores) -> float | None:
    """Trapezoidal ROC area; ``None`` when either class is missing."""
    positive = np.asarray(positive, dtype=bool)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos, n_neg = positive.sum(), (~positive).sum()
    if n_pos == 0 or n_neg == 0:
        return None
    tp, fp = _binary_curve(positive, scores)
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def binary_auprc(positive, scores) -> float | None:
    """Step-interpolated PR area with precision made non-increasing from the right."""
    positive = np.asarray(positive, dtype=bool)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = positive.sum()
    if n_pos == 0:
        return None
    tp, fp = _binary_curve(positive, scores)
    recall = np.r_[0.0, tp / n_pos]
    precision = tp / (tp + fp)
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    return float(np.sum(np.diff(recall) * precision))


def compute_metrics(y_true, y_pred, y_scores=None, num_classes: int | None = None) -> dict:
    """Accuracy, weighted F1 and (given scores) macro one-vs-rest AUROC and per-class AUPRC.

    Classes without support in ``y_true`` get ``None`` for AUROC/AUPRC and are
    left out of the macro average.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ShapeError(f"y_true {y_true.shape} and y_pred {y_pred.shape} differ")
    if num_classes is None:
        num_classes = int(max(y_true.max(initial=0), y_pred.max(initial=0)) + 1)
        if y_scores is not None:
            num_classes = max(num_classes, np.shape(y_scores)[1])
    out = {"accuracy": accuracy(y_true, y_pred),
           "weighted_f1": weighted_f1(y_true, y_pred, num_classes),
           "au_roc": None,
           "per_class_auroc": [None] * num_classes,
           "per_class_auprc": [None] * num_classes}
    if y_scores is None:
        return out
    y_scores = np.asarray(y_scores, dtype=np.float64)
    if y_scores.shape != (len(y_true), num_classes):
        raise ShapeError(f"y_scores must be ({len(y_true)}, {num_classes}), got {y_scores.shape}")
    aurocs = []
    for c in range(num_classes):
        positive = y_true == c
        if not positive.any():
            continue
        auc = binary_auroc(positive, y_scores[:, c])
        out["per_class_auroc"][c] = auc
        out["per_class_auprc"][c] = binary_auprc(positive, y_scores[:, c])
        if auc is not None:
            aurocs.append(auc)
    out["au_roc"] = float(np.mean(aurocs)) if aurocs else None
    return out
