"""Regression CNN estimating hypo-/hyperchromic percentages from a Percoll image."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from scdgcn.dataset import Dataset, PercollImage
from scdgcn.errors import DataError, ShapeError
from scdgcn.nn import (AMSGrad, Conv2D, Dense, Dropout, GlobalAvgPool, MaxPool, ReLU, Sequential,
                       mse_loss)
from scdgcn.nn.train import fit_minibatch


@dataclass(frozen=True)
class ChromeConfig:
    epochs: int = 100
    lr: float = 0.0005
    batch_size: int = 16
    widths: tuple[int, ...] = (8, 16, 32, 64, 64, 64, 64)
    pooled_layers: int = 5
    hidden: int = 64
    dropout: float = 0.5

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d


@dataclass(frozen=True)
class ChromeEstimate:
    hypo_pct: float
    hyper_pct: float


@dataclass
class ChromeNet:
    """Seven conv blocks, global average pooling, two dense layers, final ReLU.

    Outputs are ``(hypo_pct, hyper_pct)`` in raw percentage units.
    """

    model: Sequential
    loss_trace: list[float] = field(default_factory=list)

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.model.input_shape[:2]

    def predict(self, images: np.ndarray) -> np.ndarray:
        images = np.asarray(images, dtype=np.float32)
        if images.ndim == 2:
            images = images[None]
        if images.shape[1:] != self.image_shape:
            raise ShapeError(f"ChromeNet expects {self.image_shape} images, got {images.shape[1:]}")
        return self.model.predict(images[..., None]).astype(np.float64)


def build_chrome_net(height: int, width: int, config: ChromeConfig = ChromeConfig(),
                     seed: int = 0) -> Sequential:
    rng = np.random.default_rng(seed)
    layers = []
    channels = 1
    h, w = height, width
    for i, out in enumerate(config.widths):
        layers += [Conv2D(channels, out, 3, rng=rng), ReLU()]
        if i < config.pooled_layers:
            window = (2 if h >= 2 else 1, 2 if w >= 2 else 1)
            if window != (1, 1):
                layers.append(MaxPool(window))
                h //= window[0]
                w //= window[1]
        channels = out
    layers += [GlobalAvgPool(), Dropout(config.dropout), Dense(channels, config.hidden, rng=rng), ReLU(),
               Dropout(config.dropout), Dense(config.hidden, 2, rng=rng), ReLU()]
    return Sequential(layers, (height, width, 1))


def train_chrome(ds: Dataset, config: ChromeConfig = ChromeConfig(), seed: int = 0) -> ChromeNet:
    """Fit the mean-squared error on raw percentages with AMSGrad."""
    missing = [s.sample_id for s in ds if s.lab is None]
    if missing:
        raise DataError(f"train_chrome: sample {missing[0]!r} has no lab values")
    if len(ds) < 1:
        raise DataError("train_chrome: empty dataset")
    images = ds.images()[..., None]
    targets = ds.lab_matrix().astype(np.float32)
    model = build_chrome_net(images.shape[1], images.shape[2], config, seed)
    # start the output layer at the target mean so the final ReLU begins active
    model.layers[-2].params["b"][:] = targets.mean(axis=0)
    trace = fit_minibatch(model, images, targets, mse_loss, AMSGrad(lr=config.lr),
                          config.epochs, config.batch_size, seed)
    return ChromeNet(model, trace)


def predict_chrome(net: ChromeNet, img: PercollImage) -> ChromeEstimate:
    hypo, hyper = net.predict(img.pixels)[0]
    return ChromeEstimate(float(hypo), float(hyper))


def evaluate_chrome(net: ChromeNet, ds: Dataset) -> dict[str, float]:
    if len(ds) == 0:
        raise DataError("evaluate_chrome: empty dataset")
    return rmse_per_target(net.predict(ds.images()), ds.lab_matrix())


def rmse_per_target(pred: np.ndarray, truth: np.ndarray) -> dict[str, float]:
    err = np.asarray(pred, dtype=np.float64) - np.asarray(truth, dtype=np.float64)
    rmse = np.sqrt(np.mean(err ** 2, axis=0))
    return {"rmse_hypo": float(rmse[0]), "rmse_hyper": float(rmse[1])}
