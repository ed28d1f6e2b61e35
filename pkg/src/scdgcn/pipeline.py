"""End-to-end predictor: image + spleen -> lab estimates -> features -> graph node -> severity."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from scdgcn.bench import derive_seed
from scdgcn.chrome import ChromeNet, train_chrome
from scdgcn.config import PipelineConfig
from scdgcn.dataset import Dataset, PercollImage, SpleenDescriptor
from scdgcn.errors import CheckpointError, DataError
from scdgcn.features import (FeatureExtractor, FeatureSelector, RFESelection, fit_selector,
                             train_feature_extractor)
from scdgcn.gcn import (TERMS, GCNConfig, GCNModel, PopulationGraph, attach_node, build_graph,
                        graph_supports, h_scale, spleen_keys, train_gcn)
from scdgcn.nn import Sequential, load_checkpoint, save_checkpoint, softmax

SECTIONS = ("chrome", "feature_cnn", "selector", "gcn", "graph")


@dataclass(frozen=True)
class PredictionRecord:
    sample_id: str
    hypo_pct: float
    hyper_pct: float
    severity: int
    probabilities: tuple[float, ...]

    def to_json(self) -> str:
        return json.dumps({"sample_id": self.sample_id, "hypo_pct": self.hypo_pct,
                           "hyper_pct": self.hyper_pct, "severity": self.severity,
                           "probabilities": list(self.probabilities)})


@dataclass
class GraphSettings:
    lam: float
    mode: str
    terms: tuple[str, ...]
    standardize: bool


@dataclass
class TrainedPipeline:
    chrome: ChromeNet
    extractor: FeatureExtractor
    selector: FeatureSelector
    gcn: GCNModel
    graph: PopulationGraph
    spleens: list[SpleenDescriptor]
    settings: GraphSettings

    @property
    def num_classes(self) -> int:
        return self.gcn.num_classes

    def node_inputs(self, image: PercollImage) -> tuple[np.ndarray, np.ndarray]:
        """ChromeNet estimate and reduced feature row of one image."""
        pixels = image.pixels[None]
        h = np.maximum(self.chrome.predict(pixels)[0], 0.0)
        x = self.selector.transform(self.extractor.extract(pixels))[0]
        return h, x

    def predict(self, image: PercollImage, spleen: SpleenDescriptor, sample_id: str) -> PredictionRecord:
        """Attach the query as an extra node and read off its class distribution."""
        h, x = self.node_inputs(image)
        s = self.settings
        scale = h_scale(self.graph.h_used) if s.standardize else None
        adj = attach_node(self.graph.adjacency, self.graph.h_used, self.spleens, h, spleen,
                          s.lam, s.mode, s.terms, scale)
        feats = np.vstack([self.graph.features, x[None]])
        logits, _ = self.gcn.forward(graph_supports(adj, self.gcn.config.cheb_order), feats)
        probs = softmax(logits[-1:])[0]
        return PredictionRecord(sample_id, float(h[0]), float(h[1]), int(np.argmax(probs)),
                                tuple(float(p) for p in probs))

    def save(self, path: str | Path, extra_meta: dict | None = None) -> None:
        tensors = {}
        for name, value in self.chrome.model.parameters().items():
            tensors[f"chrome/{name}"] = value
        for name, value in self.extractor.cnn.parameters().items():
            tensors[f"feature_cnn/{name}"] = value
        tensors["selector/indices"] = self.selector.indices
        tensors["selector/mean"] = self.selector.mean
        tensors["selector/std"] = self.selector.std
        for name, value in self.gcn.params.items():
            tensors[f"gcn/{name}"] = value
        g = self.graph
        tensors["graph/adjacency"] = g.adjacency
        tensors["graph/features"] = g.features
        tensors["graph/h"] = g.h_used
        tensors["graph/spleen"] = spleen_keys(self.spleens)
        tensors["graph/labels"] = g.labels
        s = self.settings
        meta = {
            "sections": list(SECTIONS),
            "chrome": {"architecture": self.chrome.model.architecture()},
            "feature_cnn": {"architecture": self.extractor.cnn.architecture(),
                            "f_fft": self.extractor.f_fft, "n_fft": self.extractor.n_fft},
            "selector": {"num_features": self.selector.selection.num_features},
            "gcn": {"config": self.gcn.config.to_dict(), "in_dim": self.gcn.in_dim,
                    "num_classes": self.gcn.num_classes},
            "graph": {"lam": s.lam, "mode": s.mode, "terms": list(s.terms), "standardize": s.standardize,
                      "sample_ids": list(g.sample_ids), "num_classes": g.num_classes},
        }
        meta.update(extra_meta or {})
        save_checkpoint(path, tensors, meta)


def train_pipeline(ds: Dataset, config: PipelineConfig = PipelineConfig(), seed: int = 0) -> TrainedPipeline:
    """Fit every stage on all of ``ds`` (which must be fully labelled)."""
    unlabeled = [s.sample_id for s in ds if s.severity is None or s.lab is None]
    if unlabeled:
        raise DataError(f"training needs lab values and severity for every sample; {unlabeled[0]!r} lacks them")
    images, labels = ds.images(), ds.labels()
    chrome = train_chrome(ds, config.chrome, derive_seed(seed, 0, 1))
    extractor = train_feature_extractor(images, labels, ds.num_classes, config.features, derive_seed(seed, 0, 2))
    raw = extractor.extract(images)
    selector = fit_selector(raw, labels, ds.num_classes, config.features)
    g = config.graph
    graph = build_graph(ds, selector.transform(raw), "estimated", g.lam, g.mode, h=chrome.predict(images),
                        standardize=g.standardize_h)
    gcn = train_gcn(graph, config.gcn, derive_seed(seed, 0, 3))
    return TrainedPipeline(chrome, extractor, selector, gcn, graph, ds.spleens(),
                           GraphSettings(g.lam, g.mode, TERMS, g.standardize_h))


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def _section(path, meta: dict, tensors: dict, name: str) -> tuple[dict, dict[str, np.ndarray]]:
    if name not in meta.get("sections", []) or name not in meta:
        raise CheckpointError(f"{path}: checkpoint has no '{name}' section")
    prefix = f"{name}/"
    return meta[name], {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}


def _restore(path, arch: dict, params: dict[str, np.ndarray], section: str) -> Sequential:
    model = Sequential.from_architecture(arch)
    expected = model.parameters()
    missing = sorted(set(expected) - set(params))
    if missing:
        raise CheckpointError(f"{path}: section '{section}' is missing tensor {missing[0]}")
    for name in expected:
        try:
            model.set_parameter(name, params[name])
        except ValueError as exc:
            raise CheckpointError(f"{path}: section '{section}': {exc}") from None
    return model


def _need(path, params: dict, section: str, *names: str) -> None:
    for n in names:
        if n not in params:
            raise CheckpointError(f"{path}: section '{section}' is missing tensor {n}")


def load_pipeline(path: str | Path, graph_path: str | Path | None = None) -> TrainedPipeline:
    """Rebuild a :class:`TrainedPipeline`; ``graph_path`` may supply the reference graph separately."""
    meta, tensors = load_checkpoint(path)
    cmeta, cparams = _section(path, meta, tensors, "chrome")
    chrome = ChromeNet(_restore(path, cmeta["architecture"], cparams, "chrome"))
    fmeta, fparams = _section(path, meta, tensors, "feature_cnn")
    extractor = FeatureExtractor(_restore(path, fmeta["architecture"], fparams, "feature_cnn"),
                                 int(fmeta["f_fft"]), int(fmeta["n_fft"]))
    smeta, sparams = _section(path, meta, tensors, "selector")
    _need(path, sparams, "selector", "indices", "mean", "std")
    indices = sparams["indices"].astype(np.int64)
    selector = FeatureSelector(RFESelection(indices, [], int(smeta["num_features"])),
                               sparams["mean"].astype(np.float64), sparams["std"].astype(np.float64))
    gmeta, gparams = _section(path, meta, tensors, "gcn")
    gcn = GCNModel(int(gmeta["in_dim"]), int(gmeta["num_classes"]), GCNConfig(**gmeta["config"]))
    _need(path, gparams, "gcn", *gcn.params)
    for name, value in gcn.params.items():
        if gparams[name].shape != value.shape:
            raise CheckpointError(f"{path}: section 'gcn': tensor {name} has shape {gparams[name].shape}")
        gcn.params[name] = gparams[name].astype(np.float64)

    source = path
    if graph_path is not None:
        source = graph_path
        meta, tensors = load_checkpoint(graph_path)
    rmeta, rparams = _section(source, meta, tensors, "graph")
    _need(source, rparams, "graph", "adjacency", "features", "h", "spleen", "labels")
    features = rparams["features"].astype(np.float64)
    if features.shape[1] != gcn.in_dim:
        raise CheckpointError(f"{source}: graph features have {features.shape[1]} columns, GCN expects {gcn.in_dim}")
    labels = rparams["labels"].astype(np.int64)
    graph = PopulationGraph(rparams["adjacency"].astype(np.float64), features, labels, labels >= 0,
                            np.zeros(len(labels), dtype=bool), int(rmeta["num_classes"]),
                            list(rmeta["sample_ids"]), rparams["h"].astype(np.float64))
    spleens = [SpleenDescriptor.removed() if k < 0 else SpleenDescriptor.measured(int(k))
               for k in rparams["spleen"].astype(np.int64)]
    settings = GraphSettings(float(rmeta["lam"]), rmeta["mode"], tuple(rmeta["terms"]), bool(rmeta["standardize"]))
    return TrainedPipeline(chrome, extractor, selector, gcn, graph, spleens, settings)
