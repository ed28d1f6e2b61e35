"""Layers with explicit forward/backward passes over NHWC numpy arrays.

Every layer is stateless between calls: ``forward`` returns the output and a
per-call cache, ``backward`` consumes that cache. Parameters live in
``layer.params`` (name -> array) and are updated in place by an optimizer.
"""

from __future__ import annotations

import numpy as np

from scdgcn.errors import ConfigurationError, ShapeError


class Layer:
    kind = "layer"

    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        return input_shape

    def check_input(self, shape: tuple[int, ...]) -> None:
        pass

    def forward(self, x: np.ndarray, training: bool, rng: np.random.Generator):
        raise NotImplementedError

    def backward(self, cache, grad: np.ndarray, need_input_grad: bool = True):
        """Return ``(grad_input, {param_name: grad})``.

        Layers may return ``None`` for the input gradient when
        ``need_input_grad`` is false.
        """
        raise NotImplementedError

    def spec(self) -> dict:
        return {"kind": self.kind}

    def astype(self, dtype) -> None:
        for name, value in self.params.items():
            self.params[name] = value.astype(dtype)


class Conv2D(Layer):
    """Same-padded 2-D convolution (cross-correlation), weights ``(k, k, C_in, C_out)``."""

    kind = "conv2d"

    def __init__(self, in_channels: int, out_channels: int, kernel: int = 3,
                 stride: int = 1, rng: np.random.Generator | None = None) -> None:
        super().__init__()
        if kernel < 1 or kernel % 2 == 0:
            raise ConfigurationError(f"conv kernel must be odd and positive, got {kernel}")
        if stride < 1:
            raise ConfigurationError(f"conv stride must be positive, got {stride}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = kernel * kernel * in_channels
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(kernel, kernel, in_channels, out_channels))
        self.params = {"W": w.astype(np.float32),
                       "b": np.zeros(out_channels, dtype=np.float32)}

    def spec(self) -> dict:
        return {"kind": self.kind, "in_channels": self.in_channels,
                "out_channels": self.out_channels, "kernel": self.kernel, "stride": self.stride}

    def _out_hw(self, h: int, w: int) -> tuple[int, int]:
        return -(-h // self.stride), -(-w // self.stride)

    def check_input(self, shape):
        if len(shape) != 4 or shape[3] != self.in_channels:
            raise ShapeError(f"expected (N, H, W, {self.in_channels}), got {shape}")

    def output_shape(self, input_shape):
        n, h, w, _ = input_shape
        ho, wo = self._out_hw(h, w)
        return (n, ho, wo, self.out_channels)

    def _pad(self, h: int, w: int) -> tuple[int, int, int, int]:
        k, s = self.kernel, self.stride
        ho, wo = self._out_hw(h, w)
        ph = max((ho - 1) * s + k - h, 0)
        pw = max((wo - 1) * s + k - w, 0)
        return ph // 2, ph - ph // 2, pw // 2, pw - pw // 2

    def forward(self, x, training, rng):
        n, h, w, c = x.shape
        k, s = self.kernel, self.stride
        top, bottom, left, right = self._pad(h, w)
        xp = np.pad(x, ((0, 0), (top, bottom), (left, right), (0, 0)))
        cols2d = _im2col(xp, k, s)
        w2d = self.params["W"].reshape(k * k * c, self.out_channels)
        ho, wo = self._out_hw(h, w)
        out = (cols2d @ w2d + self.params["b"]).reshape(n, ho, wo, self.out_channels)
        return out, (x.shape, xp.shape, cols2d)

    def backward(self, cache, grad, need_input_grad=True):
        x_shape, xp_shape, cols2d = cache
        n, h, w, c = x_shape
        k, s = self.kernel, self.stride
        ho, wo = grad.shape[1:3]
        g2d = grad.reshape(-1, self.out_channels)
        grads = {"W": (cols2d.T @ g2d).reshape(self.params["W"].shape),
                 "b": _column_sums(g2d)}
        if not need_input_grad:
            return None, grads
        top, _, left, _ = self._pad(h, w)
        if s == 1:
            # input gradient is a full correlation with the flipped, transposed kernel
            gp = np.pad(grad, ((0, 0), (k - 1 - top, top), (k - 1 - left, left), (0, 0)))
            w_flip = self.params["W"][::-1, ::-1].transpose(0, 1, 3, 2)
            dx = _im2col(gp, k, 1) @ w_flip.reshape(k * k * self.out_channels, c)
            return dx.reshape(n, h, w, c), grads
        w2d = self.params["W"].reshape(k * k * c, self.out_channels)
        dcols = (g2d @ w2d.T).reshape(n, ho, wo, k, k, c)
        dxp = np.zeros(xp_shape, dtype=grad.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, i:i + s * ho:s, j:j + s * wo:s, :] += dcols[:, :, :, i, j, :]
        return dxp[:, top:top + h, left:left + w, :], grads


def _column_sums(a: np.ndarray) -> np.ndarray:
    # a BLAS product is far faster than ndarray.sum(axis=0) on tall, narrow arrays
    return np.ones(a.shape[0], dtype=a.dtype) @ a


def _im2col(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    """Valid-mode patches of a padded NHWC array as rows ordered (ky, kx, c)."""
    n, _, _, c = xp.shape
    windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]
    cols = np.ascontiguousarray(windows.transpose(0, 1, 2, 4, 5, 3))
    return cols.reshape(-1, k * k * c)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, training, rng):
        return np.maximum(x, 0), x > 0

    def backward(self, cache, grad, need_input_grad=True):
        return grad * cache, {}


class MaxPool(Layer):
    """Non-overlapping max pooling; trailing rows/columns that do not fill a window are dropped."""

    kind = "maxpool"

    def __init__(self, window: int | tuple[int, int] = 2) -> None:
        super().__init__()
        self.window = (window, window) if isinstance(window, int) else tuple(window)
        if min(self.window) < 1:
            raise ConfigurationError(f"pool window must be positive, got {self.window}")

    def spec(self):
        return {"kind": self.kind, "window": list(self.window)}

    def check_input(self, shape):
        if len(shape) != 4 or shape[1] < self.window[0] or shape[2] < self.window[1]:
            raise ShapeError(f"pool window {self.window} does not fit input {shape}")

    def output_shape(self, input_shape):
        n, h, w, c = input_shape
        return (n, h // self.window[0], w // self.window[1], c)

    def forward(self, x, training, rng):
        n, h, w, c = x.shape
        wh, ww = self.window
        ho, wo = h // wh, w // ww
        views = [x[:, i:ho * wh:wh, j:wo * ww:ww, :] for i in range(wh) for j in range(ww)]
        out = views[0].copy()
        for v in views[1:]:
            np.maximum(out, v, out=out)
        # route each window's gradient to its first maximal entry
        masks = []
        taken = np.zeros(out.shape, dtype=bool)
        for v in views:
            hit = (v == out) & ~taken
            taken |= hit
            masks.append(hit)
        return out, (x.shape, masks)

    def backward(self, cache, grad, need_input_grad=True):
        x_shape, masks = cache
        wh, ww = self.window
        ho, wo = grad.shape[1:3]
        dx = np.zeros(x_shape, dtype=grad.dtype)
        for idx, hit in enumerate(masks):
            i, j = divmod(idx, ww)
            dx[:, i:ho * wh:wh, j:wo * ww:ww, :] = grad * hit
        return dx, {}


class GlobalAvgPool(Layer):
    kind = "global_avg_pool"

    def check_input(self, shape):
        if len(shape) != 4:
            raise ShapeError(f"expected (N, H, W, C), got {shape}")

    def output_shape(self, input_shape):
        return (input_shape[0], input_shape[3])

    def forward(self, x, training, rng):
        return x.mean(axis=(1, 2)), x.shape

    def backward(self, cache, grad, need_input_grad=True):
        n, h, w, c = cache
        return np.broadcast_to(grad[:, None, None, :] / (h * w), cache).copy(), {}


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, input_shape):
        return (input_shape[0], int(np.prod(input_shape[1:])))

    def forward(self, x, training, rng):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, cache, grad, need_input_grad=True):
        return grad.reshape(cache), {}


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator | None = None) -> None:
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        rng = rng if rng is not None else np.random.default_rng(0)
        w = rng.normal(0.0, np.sqrt(2.0 / in_dim), size=(in_dim, out_dim))
        self.params = {"W": w.astype(np.float32), "b": np.zeros(out_dim, dtype=np.float32)}

    def spec(self):
        return {"kind": self.kind, "in_dim": self.in_dim, "out_dim": self.out_dim}

    def check_input(self, shape):
        if len(shape) != 2 or shape[1] != self.in_dim:
            raise ShapeError(f"expected (N, {self.in_dim}), got {shape}")

    def output_shape(self, input_shape):
        return (input_shape[0], self.out_dim)

    def forward(self, x, training, rng):
        return x @ self.params["W"] + self.params["b"], x

    def backward(self, cache, grad, need_input_grad=True):
        return grad @ self.params["W"].T, {"W": cache.T @ grad, "b": _column_sums(grad)}


class Dropout(Layer):
    """Inverted dropout: survivors are scaled by ``1 / (1 - rate)`` at train time."""

    kind = "dropout"

    def __init__(self, rate: float) -> None:
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ConfigurationError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def spec(self):
        return {"kind": self.kind, "rate": self.rate}

    def forward(self, x, training, rng):
        if not training or self.rate == 0.0:
            return x, None
        keep = (rng.random(x.shape) >= self.rate).astype(x.dtype) / (1.0 - self.rate)
        return x * keep, keep

    def backward(self, cache, grad, need_input_grad=True):
        return (grad if cache is None else grad * cache), {}


class Softmax(Layer):
    kind = "softmax"

    def forward(self, x, training, rng):
        s = softmax(x)
        return s, s

    def backward(self, cache, grad, need_input_grad=True):
        s = cache
        return s * (grad - (grad * s).sum(axis=-1, keepdims=True)), {}


def softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


LAYER_TYPES = {cls.kind: cls for cls in
               (Conv2D, ReLU, MaxPool, GlobalAvgPool, Flatten, Dense, Dropout, Softmax)}


def layer_from_spec(spec: dict) -> Layer:
    """Rebuild an (uninitialised) layer from the dict produced by ``Layer.spec``."""
    spec = dict(spec)
    cls = LAYER_TYPES.get(spec.pop("kind", None))
    if cls is None:
        raise ConfigurationError(f"unknown layer spec {spec}")
    if cls is MaxPool:
        return MaxPool(tuple(spec["window"]))
    return cls(**spec)
