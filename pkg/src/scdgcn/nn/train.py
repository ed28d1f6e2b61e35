"""Shuffled mini-batch training loop shared by the CNNs."""

from __future__ import annotations

from typing import Callable

import numpy as np

from scdgcn.nn.model import Sequential
from scdgcn.nn.optim import Adam

LossFn = Callable[[np.ndarray, np.ndarray], tuple[float, np.ndarray]]


def fit_minibatch(model: Sequential, inputs: np.ndarray, targets: np.ndarray, loss_fn: LossFn,
                  optimizer: Adam, epochs: int, batch_size: int, seed: int) -> list[float]:
    """Train in place; returns the sample-weighted mean training loss of each epoch.

    ``loss_fn(output, target_batch)`` returns ``(loss, grad wrt output)``.
    Shuffling and dropout masks are both driven by ``seed``.
    """
    rng = np.random.default_rng(seed)
    n = len(inputs)
    trace = []
    params = model.parameters()
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            out, cache = model.forward(inputs[idx], training=True, rng_seed=int(rng.integers(2**31)))
            loss, grad = loss_fn(out, targets[idx])
            grads, _ = model.backward(cache, grad, input_grad=False)
            optimizer.step(params, grads)
            model.mark_updated()
            total += loss * len(idx)
        trace.append(total / n)
    return trace
