"""Population graph over samples and a spectral GCN for severity grading.

Edge weights follow ``exp(-(||H_a - H_b|| + lam * bracket))`` where ``H`` holds
(hypo %, hyper %) and the bracket compares spleen descriptors. ``literal``
mode sets the bracket to 1 when the spleens are equal, ``corrected`` mode when
they differ.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from scdgcn.dataset import Dataset, SpleenDescriptor
from scdgcn.errors import ConfigurationError, DataError, ShapeError, UsageError
from scdgcn.nn import Adam, masked_cross_entropy, softmax

MODES = ("literal", "corrected")
TERMS = ("spleen", "hypo", "hyper")
H_SOURCES = ("estimated", "groundtruth", "randomized")


@dataclass(frozen=True)
class SimilarityInputs:
    h_hat: tuple[float, float]
    spleen: SpleenDescriptor

    def __post_init__(self):
        if len(self.h_hat) != 2 or min(self.h_hat) < 0:
            raise DataError(f"h_hat must be two non-negative percentages, got {self.h_hat}")


def _check_kernel_args(lam: float, mode: str, terms: Sequence[str]) -> tuple[str, ...]:
    if lam < 0:
        raise ConfigurationError(f"lambda must be non-negative, got {lam}")
    if mode not in MODES:
        raise ConfigurationError(f"similarity mode must be one of {MODES}, got {mode!r}")
    terms = tuple(terms)
    if not terms or any(t not in TERMS for t in terms):
        raise ConfigurationError(f"similarity terms must be a non-empty subset of {TERMS}, got {terms}")
    return terms


def similarity(a: SimilarityInputs, b: SimilarityInputs, lam: float = 10.0, mode: str = "literal",
               terms: Sequence[str] = TERMS) -> float:
    terms = _check_kernel_args(lam, mode, terms)
    sq = 0.0
    for pos, name in enumerate(("hypo", "hyper")):
        if name in terms:
            d = a.h_hat[pos] - b.h_hat[pos]
            sq += d * d
    bracket = 0.0
    if "spleen" in terms:
        equal = a.spleen == b.spleen
        bracket = float(equal if mode == "literal" else not equal)
    return math.exp(-(math.sqrt(sq) + lam * bracket))


def spleen_keys(spleens: Sequence[SpleenDescriptor]) -> np.ndarray:
    """Integer code per descriptor; ``removed`` is -1 so it never equals a measured size."""
    return np.array([-1 if s.is_removed else s.size_cm for s in spleens], dtype=np.int64)


def similarity_matrix(h: np.ndarray, spleens: Sequence[SpleenDescriptor], lam: float = 10.0,
                      mode: str = "literal", terms: Sequence[str] = TERMS,
                      standardize: bool = False) -> np.ndarray:
    """Symmetric ``(n, n)`` edge weights with a zero diagonal."""
    terms = _check_kernel_args(lam, mode, terms)
    h = np.asarray(h, dtype=np.float64).reshape(-1, 2)
    n = len(h)
    if len(spleens) != n:
        raise ShapeError(f"{n} lab rows but {len(spleens)} spleen descriptors")
    if standardize:
        h = h / h_scale(h)
    sq = np.zeros((n, n))
    for pos, name in enumerate(("hypo", "hyper")):
        if name in terms:
            d = h[:, None, pos] - h[None, :, pos]
            sq += d * d
    exponent = np.sqrt(sq)
    if "spleen" in terms:
        keys = spleen_keys(spleens)
        equal = keys[:, None] == keys[None, :]
        exponent = exponent + lam * (equal if mode == "literal" else ~equal)
    upper = np.triu(np.exp(-exponent), k=1)
    return upper + upper.T


def h_scale(h: np.ndarray) -> np.ndarray:
    """Per-column divisor used by the standardised-distance option."""
    return np.maximum(np.asarray(h, dtype=np.float64).reshape(-1, 2).std(axis=0), 1e-12)


def attach_node(adj: np.ndarray, h: np.ndarray, spleens: Sequence[SpleenDescriptor],
                h_new, spleen_new: SpleenDescriptor, lam: float = 10.0, mode: str = "literal",
                terms: Sequence[str] = TERMS, scale: np.ndarray | None = None) -> np.ndarray:
    """Grow an ``(n, n)`` graph by one node whose edges follow the same kernel.

    ``scale`` divides both lab columns first (pass the training graph's
    :func:`h_scale` when that graph was built standardised).
    """
    terms = _check_kernel_args(lam, mode, terms)
    adj = np.asarray(adj, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64).reshape(-1, 2)
    q = np.asarray(h_new, dtype=np.float64).reshape(2)
    n = len(adj)
    if adj.shape != (n, n) or len(h) != n or len(spleens) != n:
        raise ShapeError(f"attach_node: adjacency {adj.shape}, {len(h)} lab rows, {len(spleens)} spleens")
    if scale is not None:
        h, q = h / scale, q / scale
    sq = np.zeros(n)
    for pos, name in enumerate(("hypo", "hyper")):
        if name in terms:
            sq += (h[:, pos] - q[pos]) ** 2
    exponent = np.sqrt(sq)
    if "spleen" in terms:
        equal = spleen_keys(spleens) == spleen_keys([spleen_new])[0]
        exponent = exponent + lam * (equal if mode == "literal" else ~equal)
    row = np.exp(-exponent)
    out = np.zeros((n + 1, n + 1))
    out[:n, :n] = adj
    out[n, :n] = row
    out[:n, n] = row
    return out


def normalize_propagation(adj: np.ndarray) -> np.ndarray:
    """``D^-1/2 (A + I) D^-1/2`` with ``D`` the degree matrix of ``A + I``."""
    adj = np.asarray(adj, dtype=np.float64)
    a_hat = adj + np.eye(len(adj))
    d = 1.0 / np.sqrt(a_hat.sum(axis=1))
    return d[:, None] * a_hat * d[None, :]


def chebyshev_supports(adj: np.ndarray, order: int) -> list[np.ndarray]:
    """``T_0..T_{order-1}`` of the rescaled normalised Laplacian (``lambda_max`` taken as 2)."""
    adj = np.asarray(adj, dtype=np.float64)
    deg = adj.sum(axis=1)
    d = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    lap = np.eye(len(adj)) - d[:, None] * adj * d[None, :]
    scaled = lap - np.eye(len(adj))
    supports = [np.eye(len(adj))]
    if order > 1:
        supports.append(scaled)
    for _ in range(2, order):
        supports.append(2.0 * scaled @ supports[-1] - supports[-2])
    return supports


# ---------------------------------------------------------------------------
# Graph construction
# ---------------------------------------------------------------------------

@dataclass
class PopulationGraph:
    adjacency: np.ndarray
    features: np.ndarray
    labels: np.ndarray  # -1 where unknown
    train_mask: np.ndarray
    test_mask: np.ndarray
    num_classes: int
    sample_ids: list[str] = field(default_factory=list)
    h_used: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.adjacency)
        if self.adjacency.shape != (n, n):
            raise ShapeError(f"adjacency must be square, got {self.adjacency.shape}")
        if len(self.features) != n or len(self.labels) != n:
            raise ShapeError("features/labels are not row-aligned with the adjacency")
        if np.any(self.train_mask & self.test_mask):
            raise DataError("train and test masks overlap")
        labeled = self.labels >= 0
        if np.any(self.train_mask & ~labeled):
            raise DataError("train_mask selects unlabeled nodes")

    @property
    def n(self) -> int:
        return len(self.adjacency)


def lab_source(ds: Dataset, h_source: str, chrome_net=None, seed: int = 0) -> np.ndarray:
    """The ``(n, 2)`` percentages used by the kernel for the requested provenance."""
    if h_source == "groundtruth":
        return ds.lab_matrix()
    if h_source == "estimated":
        if chrome_net is None:
            raise UsageError("estimated lab values need a trained ChromeNet")
        return chrome_net.predict(ds.images())
    if h_source == "randomized":
        observed = np.array([[s.lab.hypo_pct, s.lab.hyper_pct] for s in ds if s.lab is not None])
        if len(observed) == 0:
            raise DataError("randomized lab values need at least one observed lab row")
        rng = np.random.default_rng(seed)
        lo, hi = observed.min(axis=0), observed.max(axis=0)
        return rng.uniform(lo, hi, size=(len(ds), 2))
    raise ConfigurationError(f"h_source must be one of {H_SOURCES}, got {h_source!r}")


def build_graph(ds: Dataset, features: np.ndarray, h_source: str = "estimated",
                lam: float = 10.0, mode: str = "literal", train_mask: np.ndarray | None = None,
                test_mask: np.ndarray | None = None, chrome_net=None, seed: int = 0,
                terms: Sequence[str] = TERMS, standardize: bool = False,
                h: np.ndarray | None = None) -> PopulationGraph:
    """All-pairs population graph. Pass ``h`` to reuse precomputed lab estimates."""
    features = np.asarray(features, dtype=np.float64)
    n = len(ds)
    if len(features) != n:
        raise ShapeError(f"{len(features)} feature rows for {n} samples")
    if h is None:
        h = lab_source(ds, h_source, chrome_net, seed)
    h = np.maximum(np.asarray(h, dtype=np.float64), 0.0)
    adj = similarity_matrix(h, ds.spleens(), lam, mode, terms, standardize)
    labels = np.array([-1 if s.severity is None else s.severity for s in ds], dtype=np.int64)
    if train_mask is None:
        train_mask = labels >= 0
    train_mask = np.asarray(train_mask, dtype=bool)
    if test_mask is None:
        test_mask = ~train_mask
    return PopulationGraph(adj, features, labels, train_mask, np.asarray(test_mask, dtype=bool),
                           ds.num_classes, ds.sample_ids, h)


def export_graph(graph: PopulationGraph, directory: str | Path) -> tuple[Path, Path]:
    """Write ``edges.csv`` (src,dst,weight; upper triangle) and ``nodes.csv`` (sample_id,label,mask)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ids = graph.sample_ids or [str(i) for i in range(graph.n)]
    edges, nodes = directory / "edges.csv", directory / "nodes.csv"
    rows, cols = np.triu_indices(graph.n, k=1)
    with open(edges, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src", "dst", "weight"])
        for i, j in zip(rows, cols):
            if graph.adjacency[i, j] > 0:
                w.writerow([ids[i], ids[j], repr(float(graph.adjacency[i, j]))])
    with open(nodes, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "label", "mask"])
        for i in range(graph.n):
            mask = "train" if graph.train_mask[i] else "test" if graph.test_mask[i] else "none"
            w.writerow([ids[i], "" if graph.labels[i] < 0 else int(graph.labels[i]), mask])
    return edges, nodes


# ---------------------------------------------------------------------------
# GCN
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GCNConfig:
    hidden: int = 50
    hidden_layers: int = 2
    dropout: float = 0.2
    epochs: int = 300
    lr: float = 0.01
    cheb_order: int = 1  # 1 = first-order renormalised propagation
    weight_decay: float = 0.0  # L2 on the first layer's weights

    def to_dict(self) -> dict:
        return asdict(self)


def graph_supports(adj: np.ndarray, cheb_order: int) -> list[np.ndarray]:
    if cheb_order < 1:
        raise ConfigurationError(f"cheb_order must be >= 1, got {cheb_order}")
    if cheb_order == 1:
        return [normalize_propagation(adj)]
    return chebyshev_supports(adj, cheb_order)


class GCNModel:
    """Graph convolutions ``Z = sum_k S_k H W_k + b`` with ReLU and dropout between layers."""

    def __init__(self, in_dim: int, num_classes: int, config: GCNConfig = GCNConfig(), seed: int = 0):
        if not 0.0 <= config.dropout < 1.0:
            raise ConfigurationError(f"dropout must be in [0, 1), got {config.dropout}")
        self.config = config
        self.in_dim = in_dim
        self.num_classes = num_classes
        rng = np.random.default_rng(seed)
        dims = [in_dim] + [config.hidden] * config.hidden_layers + [num_classes]
        self.params: dict[str, np.ndarray] = {}
        for layer, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
            limit = np.sqrt(6.0 / (d_in + d_out))
            for k in range(config.cheb_order):
                self.params[f"{layer}.W{k}"] = rng.uniform(-limit, limit, size=(d_in, d_out))
            self.params[f"{layer}.b"] = np.zeros(d_out)
        self.num_layers = len(dims) - 1
        self.loss_trace: list[float] = []

    def forward(self, supports: list[np.ndarray], x: np.ndarray, training: bool = False,
                rng: np.random.Generator | None = None):
        if x.shape[1] != self.in_dim:
            raise ShapeError(f"GCN expects {self.in_dim} node features, got {x.shape[1]}")
        cache = []
        h = x
        for layer in range(self.num_layers):
            keep = None
            if layer > 0 and training and self.config.dropout > 0:
                keep = (rng.random(h.shape) >= self.config.dropout) / (1.0 - self.config.dropout)
                h = h * keep
            sh = [s @ h for s in supports]
            z = sum(m @ self.params[f"{layer}.W{k}"] for k, m in enumerate(sh)) + self.params[f"{layer}.b"]
            last = layer == self.num_layers - 1
            cache.append((keep, sh, None if last else z > 0))
            h = z if last else np.maximum(z, 0.0)
        return h, cache

    def backward(self, supports: list[np.ndarray], cache, grad: np.ndarray) -> dict[str, np.ndarray]:
        grads = {}
        for layer in range(self.num_layers - 1, -1, -1):
            keep, sh, active = cache[layer]
            if active is not None:
                grad = grad * active
            grads[f"{layer}.b"] = grad.sum(axis=0)
            dh = 0.0
            for k, m in enumerate(sh):
                w = self.params[f"{layer}.W{k}"]
                grads[f"{layer}.W{k}"] = m.T @ grad
                dh = dh + supports[k].T @ (grad @ w.T)
            if keep is not None:
                dh = dh * keep
            grad = dh
        return grads


def _check_classes(graph: PopulationGraph) -> None:
    if not graph.train_mask.any():
        raise DataError("train_gcn: train mask selects no nodes")
    present = set(np.unique(graph.labels[graph.train_mask]).tolist())
    absent = [c for c in range(graph.num_classes) if c not in present]
    if absent:
        raise DataError(f"train_gcn: classes {absent} have no training node")


def train_gcn(graph: PopulationGraph, config: GCNConfig = GCNConfig(), seed: int = 0) -> GCNModel:
    """Full-batch transductive training on the train-mask nodes."""
    _check_classes(graph)
    supports = graph_supports(graph.adjacency, config.cheb_order)
    x = np.asarray(graph.features, dtype=np.float64)
    model = GCNModel(x.shape[1], graph.num_classes, config, seed)
    opt = Adam(lr=config.lr)
    rng = np.random.default_rng(seed + 1)
    labels = np.where(graph.labels >= 0, graph.labels, 0)
    for _ in range(config.epochs):
        logits, cache = model.forward(supports, x, training=True, rng=rng)
        loss, grad = masked_cross_entropy(logits, labels, graph.train_mask)
        grads = model.backward(supports, cache, grad)
        if config.weight_decay > 0:
            for k in range(config.cheb_order):
                w = model.params[f"0.W{k}"]
                loss += 0.5 * config.weight_decay * float(np.sum(w * w))
                grads[f"0.W{k}"] = grads[f"0.W{k}"] + config.weight_decay * w
        opt.step(model.params, grads)
        model.loss_trace.append(loss)
    return model


def predict_gcn(model: GCNModel, graph: PopulationGraph) -> tuple[np.ndarray, np.ndarray]:
    """Per-node class probabilities and their argmax (dropout off)."""
    supports = graph_supports(graph.adjacency, model.config.cheb_order)
    logits, _ = model.forward(supports, np.asarray(graph.features, dtype=np.float64))
    probs = softmax(logits)
    return probs, probs.argmax(axis=1)


def gcn_logits(model: GCNModel, graph: PopulationGraph) -> np.ndarray:
    supports = graph_supports(graph.adjacency, model.config.cheb_order)
    return model.forward(supports, np.asarray(graph.features, dtype=np.float64))[0]
