"""Losses returning ``(value, gradient wrt the prediction)``."""

from __future__ import annotations

import numpy as np

from scdgcn.errors import ShapeError, UsageError
from scdgcn.nn.layers import softmax


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean over every entry of ``(pred - target) ** 2``."""
    pred = np.asarray(pred)
    target = np.asarray(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: pred {pred.shape} vs target {target.shape}")
    diff = pred - target
    n = diff.size
    return float(np.sum(diff * diff) / n), 2.0 * diff / n


def masked_cross_entropy(logits: np.ndarray, labels: np.ndarray,
                         mask: np.ndarray) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy averaged over the rows selected by ``mask``.

    Unmasked rows get an exactly-zero gradient.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    mask = np.asarray(mask, dtype=bool)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],) or mask.shape != labels.shape:
        raise ShapeError(f"masked_cross_entropy: logits {logits.shape}, labels {labels.shape}, "
                         f"mask {mask.shape}")
    count = int(mask.sum())
    if count == 0:
        raise UsageError("masked_cross_entropy: mask selects no nodes")
    rows = np.flatnonzero(mask)
    z = logits[rows] - logits[rows].max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    picked = z[np.arange(len(rows)), labels[rows]]
    loss = float(np.sum(log_norm - picked) / count)
    grad = np.zeros_like(logits)
    p = softmax(logits[rows])
    p[np.arange(len(rows)), labels[rows]] -= 1.0
    grad[rows] = p / count
    return loss, grad
