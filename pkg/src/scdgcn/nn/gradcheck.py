"""Central finite-difference gradient verification (run in float64)."""

from __future__ import annotations

from typing import Callable

import numpy as np

from scdgcn.nn.model import Sequential


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def numeric_gradient(f: Callable[[], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Perturb ``x`` in place entry by entry; ``f`` must read ``x``."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def check_model_gradients(model: Sequential, x: np.ndarray,
                          loss: Callable[[np.ndarray], tuple[float, np.ndarray]],
                          training: bool = False, rng_seed: int = 0,
                          h: float = 1e-5) -> dict[str, float]:
    """Max elementwise relative error per parameter (and ``"input"``).

    The model is converted to float64 in place. With ``training=True`` the
    dropout masks are held fixed by reusing ``rng_seed`` for every evaluation.
    """
    model.astype(np.float64)
    x = np.array(x, dtype=np.float64)

    def value() -> float:
        out, _ = model.forward(x, training=training, rng_seed=rng_seed)
        return loss(out)[0]

    out, cache = model.forward(x, training=training, rng_seed=rng_seed)
    grads, grad_x = model.backward(cache, loss(out)[1])
    errors = {}
    for name, p in model.parameters().items():
        errors[name] = float(relative_error(grads[name], numeric_gradient(value, p, h)).max())
    errors["input"] = float(relative_error(grad_x, numeric_gradient(value, x, h)).max())
    return errors


LAYER_KINDS = ("conv2d", "conv2d_stride2", "relu", "maxpool", "global_avg_pool", "flatten",
               "dense", "dropout", "softmax")
LOSS_KINDS = ("mse", "masked_cross_entropy")


def _layer_case(kind: str, rng: np.random.Generator):
    from scdgcn.nn import layers as L

    n = int(rng.integers(1, 4))
    h, w = int(rng.integers(2, 7)), int(rng.integers(2, 7))
    c = int(rng.integers(1, 4))
    if kind.startswith("conv2d"):
        stride = 2 if kind.endswith("stride2") else 1
        kernel = int(rng.choice([1, 3]))
        layer = L.Conv2D(c, int(rng.integers(1, 4)), kernel, stride, rng=rng)
        layer.params["b"] = rng.normal(size=layer.params["b"].shape).astype(np.float32)
        return layer, rng.normal(size=(n, h, w, c))
    if kind == "relu":
        x = rng.normal(size=(n, h, w, c))
        return L.ReLU(), np.where(np.abs(x) < 1e-3, 1e-2, x)
    if kind == "maxpool":
        window = (int(rng.integers(1, 3)), int(rng.integers(1, 3)))
        return L.MaxPool(window), rng.normal(size=(n, h + 1, w + 1, c))
    if kind == "global_avg_pool":
        return L.GlobalAvgPool(), rng.normal(size=(n, h, w, c))
    if kind == "flatten":
        return L.Flatten(), rng.normal(size=(n, h, w, c))
    if kind == "dense":
        d_in, d_out = int(rng.integers(1, 8)), int(rng.integers(1, 6))
        layer = L.Dense(d_in, d_out, rng=rng)
        layer.params["b"] = rng.normal(size=d_out).astype(np.float32)
        return layer, rng.normal(size=(n, d_in))
    if kind == "dropout":
        return L.Dropout(float(rng.uniform(0.1, 0.7))), rng.normal(size=(n, h * w))
    if kind == "softmax":
        return L.Softmax(), rng.normal(size=(n, int(rng.integers(2, 6))))
    raise ValueError(kind)


def check_layer(kind: str, seed: int, h: float = 1e-5) -> float:
    """Max relative gradient error for one randomly shaped instance of ``kind``."""
    rng = np.random.default_rng(seed)
    layer, x = _layer_case(kind, rng)
    model = Sequential([layer], x.shape[1:])
    out_shape = (x.shape[0], *model.output_shape)
    weights = rng.normal(size=out_shape)

    def loss(out):
        return float(np.sum(out * weights)), weights.copy()

    errors = check_model_gradients(model, x, loss, training=(kind == "dropout"), rng_seed=seed, h=h)
    return max(errors.values())


def check_loss(kind: str, seed: int, h: float = 1e-5) -> float:
    """Max relative error of a loss gradient with respect to its prediction input."""
    from scdgcn.nn.losses import masked_cross_entropy, mse_loss

    rng = np.random.default_rng(seed)
    n, k = int(rng.integers(1, 7)), int(rng.integers(2, 6))
    pred = rng.normal(size=(n, k))
    if kind == "mse":
        target = rng.normal(size=(n, k))

        def f():
            return mse_loss(pred, target)[0]

        analytic = mse_loss(pred, target)[1]
    else:
        labels = rng.integers(0, k, size=n)
        mask = rng.random(n) < 0.6
        mask[int(rng.integers(0, n))] = True

        def f():
            return masked_cross_entropy(pred, labels, mask)[0]

        analytic = masked_cross_entropy(pred, labels, mask)[1]
    return float(relative_error(analytic, numeric_gradient(f, pred, h)).max())
