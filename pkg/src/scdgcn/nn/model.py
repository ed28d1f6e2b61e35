"""Fixed layer-sequence model with explicit forward caches."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from scdgcn.errors import ShapeError, UsageError
from scdgcn.nn.layers import Layer, layer_from_spec


@dataclass
class ForwardCache:
    layer_caches: list
    version: int
    output_shape: tuple[int, ...]
    consumed: bool = field(default=False)


class Sequential:
    """A stack of layers. Parameter names are ``"<layer index>.<param>"``."""

    def __init__(self, layers: list[Layer], input_shape: tuple[int, ...]) -> None:
        self.layers = list(layers)
        # per-sample shape, without the batch axis
        self.input_shape = tuple(input_shape)
        self.version = 0
        self.dtype = np.dtype(np.float32)
        shape = (1, *self.input_shape)
        for idx, layer in enumerate(self.layers):
            try:
                layer.check_input(shape)
            except ShapeError as exc:
                raise ShapeError(f"layer {idx} ({layer.kind}): {exc}") from None
            shape = layer.output_shape(shape)
        self.output_shape = shape[1:]


    def parameters(self) -> dict[str, np.ndarray]:
        return {f"{i}.{name}": value
                for i, layer in enumerate(self.layers)
                for name, value in layer.params.items()}

    def set_parameter(self, name: str, value: np.ndarray) -> None:
        idx, pname = name.split(".", 1)
        layer = self.layers[int(idx)]
        if layer.params[pname].shape != value.shape:
            raise ShapeError(f"parameter {name}: expected {layer.params[pname].shape}, got {value.shape}")
        layer.params[pname] = np.asarray(value, dtype=layer.params[pname].dtype)
        self.version += 1

    def astype(self, dtype) -> "Sequential":
        for layer in self.layers:
            layer.astype(dtype)
        self.dtype = np.dtype(dtype)
        self.version += 1
        return self

    def mark_updated(self) -> None:
        self.version += 1

    def forward(self, x: np.ndarray, training: bool = False, rng_seed: int = 0):
        """Run the stack; returns ``(output, cache)``.

        Dropout masks come from ``rng_seed`` and are only drawn when training.
        """
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"layer 0 ({self.layers[0].kind if self.layers else 'input'}): "
                             f"expected per-sample shape {self.input_shape}, got {x.shape[1:]}")
        rng = np.random.default_rng(rng_seed)
        caches = []
        for idx, layer in enumerate(self.layers):
            try:
                layer.check_input(x.shape)
            except ShapeError as exc:
                raise ShapeError(f"layer {idx} ({layer.kind}): {exc}") from None
            x, cache = layer.forward(x, training, rng)
            caches.append(cache)
        return x, ForwardCache(caches, self.version, x.shape)

    def predict(self, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
        outs = [self.forward(x[i:i + batch_size])[0] for i in range(0, len(x), batch_size)]
        return np.concatenate(outs, axis=0) if outs else np.zeros((0, *self.output_shape), self.dtype)

    def backward(self, cache: ForwardCache, grad_out: np.ndarray, input_grad: bool = True):
        """Return ``(param_grads, grad_input)`` for a cache from :meth:`forward`.

        With ``input_grad=False`` the first layer may skip its input gradient
        and ``grad_input`` can be ``None``.
        """
        if cache.consumed or cache.version != self.version:
            raise UsageError("stale forward cache: parameters changed or cache already used")
        if grad_out.shape != cache.output_shape:
            raise ShapeError(f"grad_out shape {grad_out.shape} != output shape {cache.output_shape}")
        cache.consumed = True
        grads: dict[str, np.ndarray] = {}
        grad = np.asarray(grad_out, dtype=self.dtype)
        for idx in range(len(self.layers) - 1, -1, -1):
            need = input_grad or idx > 0
            grad, pgrads = self.layers[idx].backward(cache.layer_caches[idx], grad, need)
            for name, g in pgrads.items():
                grads[f"{idx}.{name}"] = g
        return grads, grad

    def architecture(self) -> dict:
        return {"input_shape": list(self.input_shape),
                "layers": [layer.spec() for layer in self.layers]}

    @classmethod
    def from_architecture(cls, arch: dict) -> "Sequential":
        return cls([layer_from_spec(s) for s in arch["layers"]], tuple(arch["input_shape"]))
