"""Adam and its AMSGrad variant with bias correction."""

from __future__ import annotations

import numpy as np

from scdgcn.errors import ConfigurationError, ShapeError


class Adam:
    """Adam (``amsgrad=False``) or AMSGrad (``amsgrad=True``).

    The AMSGrad branch keeps a running elementwise maximum of the second
    moment and divides by that instead of the current estimate.
    """

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, amsgrad: bool = False) -> None:
        if lr <= 0 or not 0 <= beta1 < 1 or not 0 <= beta2 < 1 or eps <= 0:
            raise ConfigurationError(f"invalid Adam hyperparameters lr={lr} betas=({beta1}, {beta2}) eps={eps}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.amsgrad = amsgrad
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.v_max: dict[str, np.ndarray] = {}
        self._scratch: dict[str, np.ndarray] = {}

    @property
    def kind(self) -> str:
        return "amsgrad" if self.amsgrad else "adam"

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """Update ``params`` in place."""
        for name, p in params.items():
            if name not in grads or grads[name].shape != p.shape:
                got = grads[name].shape if name in grads else None
                raise ShapeError(f"optimizer: gradient for {name} has shape {got}, expected {p.shape}")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
                self._scratch[name] = np.empty_like(p)
                if self.amsgrad:
                    self.v_max[name] = np.zeros_like(p)
            m, v, tmp = self.m[name], self.v[name], self._scratch[name]
            # in place: m = b1 m + (1 - b1) g ; v = b2 v + (1 - b2) g^2
            np.multiply(g, 1.0 - self.beta1, out=tmp)
            m *= self.beta1
            m += tmp
            np.multiply(g, g, out=tmp)
            tmp *= 1.0 - self.beta2
            v *= self.beta2
            v += tmp
            if self.amsgrad:
                np.maximum(self.v_max[name], v, out=self.v_max[name])
                second = self.v_max[name]
            else:
                second = v
            # p -= lr/bc1 * m / (sqrt(second/bc2) + eps)
            np.divide(second, bc2, out=tmp)
            np.sqrt(tmp, out=tmp)
            tmp += self.eps
            np.divide(m, tmp, out=tmp)
            tmp *= self.lr / bc1
            p -= tmp

def AMSGrad(lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> Adam:
    return Adam(lr, beta1, beta2, eps, amsgrad=True)
