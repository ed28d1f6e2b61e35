"""CNN+FFT image features and ridge-based recursive feature elimination."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from scdgcn.errors import ConfigurationError, ShapeError, UsageError
from scdgcn.nn import (Adam, Conv2D, Dense, Dropout, Flatten, MaxPool, ReLU, Sequential,
                       masked_cross_entropy)
from scdgcn.nn.train import fit_minibatch
from scdgcn.signal import next_power_of_two, spectral_features

STD_FLOOR = 1e-8


@dataclass(frozen=True)
class FeatureConfig:
    cnn_widths: tuple[int, ...] = (8, 16, 32, 64)
    cnn_features: int = 512
    f_fft: int = 512
    cnn_epochs: int = 30
    cnn_lr: float = 0.001
    cnn_batch_size: int = 16
    cnn_dropout: float = 0.5
    target_count: int = 50
    step_fraction: float = 0.1
    alpha: float = 1.0

    @property
    def raw_dim(self) -> int:
        return self.cnn_features + self.f_fft

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cnn_widths"] = list(self.cnn_widths)
        return d


# ---------------------------------------------------------------------------
# Raw CNN-FFT features
# ---------------------------------------------------------------------------

def build_feature_cnn(height: int, width: int, num_classes: int, config: FeatureConfig = FeatureConfig(),
                      seed: int = 0) -> Sequential:
    """Conv blocks, then dense ``cnn_features`` (the harvested layer), then class logits."""
    rng = np.random.default_rng(seed)
    layers = []
    channels, h, w = 1, height, width
    for out in config.cnn_widths:
        layers += [Conv2D(channels, out, 3, rng=rng), ReLU()]
        window = (2 if h >= 2 else 1, 2 if w >= 2 else 1)
        if window != (1, 1):
            layers.append(MaxPool(window))
            h, w = h // window[0], w // window[1]
        channels = out
    layers += [Flatten(), Dense(h * w * channels, config.cnn_features, rng=rng), ReLU(),
               Dropout(config.cnn_dropout), Dense(config.cnn_features, num_classes, rng=rng)]
    return Sequential(layers, (height, width, 1))


@dataclass
class FeatureExtractor:
    """Trained severity CNN plus the FFT settings; produces raw feature rows."""

    cnn: Sequential
    f_fft: int
    n_fft: int
    loss_trace: list[float] = field(default_factory=list)

    @property
    def penultimate(self) -> int:
        """Index one past the ReLU that feeds the final classification layer."""
        return len(self.cnn.layers) - 2

    @property
    def raw_dim(self) -> int:
        return self.cnn.layers[self.penultimate - 2].out_dim + self.f_fft

    def cnn_activations(self, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
        images = np.asarray(images, dtype=np.float32)
        if images.shape[1:] != self.cnn.input_shape[:2]:
            raise ShapeError(f"feature CNN expects {self.cnn.input_shape[:2]} images, got {images.shape[1:]}")
        head = Sequential(self.cnn.layers[:self.penultimate], self.cnn.input_shape)
        return head.predict(images[..., None], batch_size)

    def extract(self, images: np.ndarray) -> np.ndarray:
        """``(N, H, W)`` images -> ``(N, cnn_features + f_fft)`` raw features."""
        images = np.asarray(images, dtype=np.float32)
        if images.ndim == 2:
            images = images[None]
        deep = self.cnn_activations(images)
        spectral = np.stack([spectral_features(img, self.f_fft, self.n_fft) for img in images])
        return np.concatenate([deep, spectral], axis=1).astype(np.float32)


def fft_length(height: int, f_fft: int) -> int:
    """Padded FFT size: enough points for ``f_fft`` bins below Nyquist."""
    return next_power_of_two(max(height, 2 * f_fft))


def train_feature_extractor(images: np.ndarray, labels: np.ndarray, num_classes: int,
                            config: FeatureConfig = FeatureConfig(), seed: int = 0) -> FeatureExtractor:
    images = np.asarray(images, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    cnn = build_feature_cnn(images.shape[1], images.shape[2], num_classes, config, seed)

    def loss(out, y):
        return masked_cross_entropy(out, y, np.ones(len(y), dtype=bool))

    trace = fit_minibatch(cnn, images[..., None], labels, loss, Adam(lr=config.cnn_lr),
                          config.cnn_epochs, config.cnn_batch_size, seed)
    return FeatureExtractor(cnn, config.f_fft, fft_length(images.shape[1], config.f_fft), trace)


def extract_raw(image, extractor: FeatureExtractor | None) -> np.ndarray:
    """Single-image raw feature vector."""
    if extractor is None:
        raise UsageError("extract_raw needs a trained feature CNN")
    pixels = np.asarray(getattr(image, "pixels", image))
    return extractor.extract(pixels[None])[0]


# ---------------------------------------------------------------------------
# Ridge classifier
# ---------------------------------------------------------------------------

@dataclass
class RidgeModel:
    weights: np.ndarray  # (K, D)
    bias: np.ndarray  # (K,)
    alpha: float
    diagnostics: dict = field(default_factory=dict)

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.weights.T + self.bias

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.decision_function(X).argmax(axis=1)


def ridge_targets(y: np.ndarray, num_classes: int) -> np.ndarray:
    """One-hot labels in the {-1, +1} convention."""
    Y = -np.ones((len(y), num_classes))
    Y[np.arange(len(y)), y] = 1.0
    return Y


def fit_ridge(X: np.ndarray, y: np.ndarray, alpha: float = 1.0, num_classes: int | None = None,
              fit_intercept: bool = True) -> RidgeModel:
    """Solve ``(X'X + alpha I) W = X'Y`` (centred when ``fit_intercept``)."""
    if alpha <= 0:
        raise ConfigurationError(f"ridge alpha must be positive, got {alpha}")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(X) != len(y):
        raise ShapeError(f"fit_ridge: X {X.shape} and y {y.shape} are not row-aligned")
    k = int(num_classes if num_classes is not None else y.max() + 1)
    Y = ridge_targets(y, k)
    if fit_intercept:
        x_mean, y_mean = X.mean(axis=0), Y.mean(axis=0)
        Xc, Yc = X - x_mean, Y - y_mean
    else:
        x_mean, y_mean = np.zeros(X.shape[1]), np.zeros(k)
        Xc, Yc = X, Y
    if Xc.shape[1] > Xc.shape[0]:
        # dual form, same solution: W = X'(XX' + alpha I)^-1 Y
        gram = Xc @ Xc.T
        gram[np.diag_indices_from(gram)] += alpha
        W = Xc.T @ _spd_solve(gram, Yc)
    else:
        gram = Xc.T @ Xc
        gram[np.diag_indices_from(gram)] += alpha
        W = _spd_solve(gram, Xc.T @ Yc)
    bias = y_mean - x_mean @ W
    diagnostics = {"degenerate": bool(len(np.unique(y)) < 2)}
    return RidgeModel(W.T.copy(), bias, alpha, diagnostics)


def _spd_solve(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    L = np.linalg.cholesky(A)
    return np.linalg.solve(L.T, np.linalg.solve(L, B))


def normal_equation_residual(model: RidgeModel, X: np.ndarray, y: np.ndarray,
                             fit_intercept: bool = True) -> float:
    """``max |(X'X + alpha I) w - X'y|`` over all entries, on the same centring as the fit."""
    X = np.asarray(X, dtype=np.float64)
    Y = ridge_targets(np.asarray(y), model.weights.shape[0])
    if fit_intercept:
        X = X - X.mean(axis=0)
        Y = Y - Y.mean(axis=0)
    W = model.weights.T
    return float(np.abs(X.T @ (X @ W) + model.alpha * W - X.T @ Y).max())


# ---------------------------------------------------------------------------
# Recursive feature elimination
# ---------------------------------------------------------------------------

@dataclass
class RFESelection:
    surviving_indices: np.ndarray
    elimination_order: list[tuple[int, list[int]]]
    num_features: int

    def dropped(self) -> list[int]:
        return [i for _, idx in self.elimination_order for i in idx]


def rfe_select(X: np.ndarray, y: np.ndarray, target_count: int = 50, step_fraction: float = 0.1,
               alpha: float = 1.0, num_classes: int | None = None) -> RFESelection:
    """Repeatedly refit ridge and drop the features with the smallest weight-column norm.

    Each round drops ``ceil(step_fraction * surviving)`` features (never going
    below ``target_count``). Norm ties drop the higher index first.
    """
    X = np.asarray(X, dtype=np.float64)
    d = X.shape[1]
    if not 1 <= target_count < d:
        raise ConfigurationError(f"target_count must be in [1, {d}), got {target_count}")
    if not 0 < step_fraction <= 0.5:
        raise ConfigurationError(f"step_fraction must be in (0, 0.5], got {step_fraction}")
    k = int(num_classes if num_classes is not None else np.max(y) + 1)
    surviving = np.arange(d)
    order = []
    rnd = 0
    while len(surviving) > target_count:
        model = fit_ridge(X[:, surviving], y, alpha, k)
        norms = np.linalg.norm(model.weights, axis=0)
        n_drop = min(math.ceil(step_fraction * len(surviving)), len(surviving) - target_count)
        ranking = _rank_for_removal(norms, surviving)
        drop = np.sort(surviving[ranking[:n_drop]])
        order.append((rnd, drop.tolist()))
        surviving = np.setdiff1d(surviving, drop)
        rnd += 1
    return RFESelection(surviving, order, d)


def _rank_for_removal(norms: np.ndarray, indices: np.ndarray) -> np.ndarray:
    """Positions sorted by ascending norm; near-equal norms order by descending index."""
    scale = max(float(norms.max()), 1e-300)
    quantized = np.round(norms / scale, 10)
    return np.lexsort((-indices, quantized))


@dataclass
class FeatureSelector:
    """Fitted RFE selection plus train-fold standardisation of the kept columns."""

    selection: RFESelection
    mean: np.ndarray
    std: np.ndarray

    @property
    def indices(self) -> np.ndarray:
        return self.selection.surviving_indices

    def transform(self, X: np.ndarray) -> np.ndarray:
        return apply_selection(X, self)


def fit_selector(X_train: np.ndarray, y_train: np.ndarray, num_classes: int,
                 config: FeatureConfig = FeatureConfig()) -> FeatureSelector:
    """Standardise with train statistics, run RFE, keep the surviving columns' statistics."""
    X_train = np.asarray(X_train, dtype=np.float64)
    mean = X_train.mean(axis=0)
    std = np.maximum(X_train.std(axis=0), STD_FLOOR)
    sel = rfe_select((X_train - mean) / std, y_train, config.target_count, config.step_fraction,
                     config.alpha, num_classes)
    idx = sel.surviving_indices
    return FeatureSelector(sel, mean[idx], std[idx])


def apply_selection(X: np.ndarray, selector: FeatureSelector, standardize: bool = True) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    idx = selector.indices
    if idx.size and idx.max() >= X.shape[1]:
        raise ShapeError(f"selected index {idx.max()} out of range for {X.shape[1]} features")
    out = X[:, idx]
    if standardize:
        out = (out - selector.mean) / selector.std
    return out[0] if single else out
