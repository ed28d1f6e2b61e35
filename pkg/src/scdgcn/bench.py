"""Patient-wise cross-validation benchmark: method comparison and similarity ablation."""

from __future__ import annotations

import csv
import hashlib
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from scdgcn.chrome import ChromeConfig, ChromeNet, rmse_per_target, train_chrome
from scdgcn.dataset import Dataset, SpleenDescriptor
from scdgcn.errors import ConfigurationError, DataError, ScdGcnError
from scdgcn.features import FeatureConfig, FeatureSelector, fit_selector, train_feature_extractor
from scdgcn.gcn import GCNConfig, build_graph, predict_gcn, train_gcn
from scdgcn.metrics import compute_metrics

log = logging.getLogger(__name__)

VARIANTS = ("SVM", "SVM_Lab", "GCN_Rand", "SCD_severity_GCN", "GCN_Lab")
GCN_VARIANTS = ("GCN_Rand", "SCD_severity_GCN", "GCN_Lab")
ABLATION_SETS = (("spleen",), ("spleen", "hypo"), ("spleen", "hyper"), ("hypo", "hyper"),
                 ("spleen", "hypo", "hyper"))
SCALAR_METRICS = ("accuracy", "weighted_f1", "au_roc", "rmse_hypo", "rmse_hyper")


# ---------------------------------------------------------------------------
# Folds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FoldPlan:
    num_folds: int
    assignments: dict[str, int]

    def fold_of(self, ds: Dataset) -> np.ndarray:
        return np.array([self.assignments[p] for p in ds.patient_ids], dtype=np.int64)

    def test_mask(self, ds: Dataset, fold: int) -> np.ndarray:
        return self.fold_of(ds) == fold


def make_folds(ds: Dataset, k: int = 10, seed: int = 0) -> FoldPlan:
    """Greedy stratified, patient-disjoint fold assignment.

    Patients are ordered by (majority class, descending sample count), ties
    shuffled by ``seed``. Each goes to the fold with the fewest samples of its
    majority class, then the fewest samples overall, among folds that still
    hold fewer than ``ceil(patients / k)`` patients.
    """
    patients = sorted(set(ds.patient_ids))
    if k < 2:
        raise ConfigurationError(f"need at least 2 folds, got {k}")
    if len(patients) < k:
        raise ConfigurationError(f"{len(patients)} patients cannot fill {k} folds")
    labels = ds.labels()
    by_patient: dict[str, list[int]] = {p: [] for p in patients}
    for pid, y in zip(ds.patient_ids, labels):
        by_patient[pid].append(int(y))
    majority = {p: int(np.bincount(ys).argmax()) for p, ys in by_patient.items()}
    rng = np.random.default_rng(seed)
    shuffled = [patients[i] for i in rng.permutation(len(patients))]
    ordered = sorted(shuffled, key=lambda p: (majority[p], -len(by_patient[p])))
    cap = -(-len(patients) // k)
    class_counts = np.zeros((k, ds.num_classes), dtype=np.int64)
    totals = np.zeros(k, dtype=np.int64)
    members = np.zeros(k, dtype=np.int64)
    assignments = {}
    for p in ordered:
        c = majority[p]
        open_folds = [f for f in range(k) if members[f] < cap]
        f = min(open_folds, key=lambda f: (class_counts[f, c], totals[f], f))
        assignments[p] = f
        members[f] += 1
        totals[f] += len(by_patient[p])
        class_counts[f] += np.bincount(by_patient[p], minlength=ds.num_classes)
    return FoldPlan(k, assignments)


# ---------------------------------------------------------------------------
# Linear SVM baseline
# ---------------------------------------------------------------------------

@dataclass
class LinearSVM:
    weights: np.ndarray  # (K, D)
    bias: np.ndarray  # (K,)
    mean: np.ndarray
    std: np.ndarray

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        Z = (np.asarray(X, dtype=np.float64) - self.mean) / self.std
        return Z @ self.weights.T + self.bias

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.decision_function(X).argmax(axis=1)


def hinge_subgradient(w: np.ndarray, b: float, x: np.ndarray, y: float, lam: float):
    """Subgradient of ``lam/2 |w|^2 + max(0, 1 - y (w.x + b))`` with respect to ``(w, b)``."""
    if y * (float(w @ x) + b) < 1.0:
        return lam * w - y * x, -y
    return lam * w, 0.0


def linear_svm_fit(X: np.ndarray, y: np.ndarray, C: float = 1.0, steps: int = 10_000,
                   seed: int = 0, num_classes: int | None = None, batch_size: int = 16) -> LinearSVM:
    """One-vs-rest linear SVMs by Pegasos-style stochastic subgradient descent.

    Per class the objective is ``lam/2 |w|^2 + mean hinge`` with ``lam = 1 / (C N)``;
    features are standardised on the training rows and the iterate is averaged
    over the second half of the run.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(np.unique(y)) < 2:
        raise DataError("linear_svm_fit: need at least two classes")
    k = int(num_classes if num_classes is not None else y.max() + 1)
    mean = X.mean(axis=0)
    std = np.maximum(X.std(axis=0), 1e-8)
    Z = (X - mean) / std
    n, d = Z.shape
    lam = 1.0 / (C * n)
    rng = np.random.default_rng(seed)
    # every class is trained on the same mini-batch sequence; columns are independent problems
    T = np.where(y[:, None] == np.arange(k)[None, :], 1.0, -1.0)
    W, B = np.zeros((k, d)), np.zeros(k)
    W_avg, B_avg, count = np.zeros((k, d)), np.zeros(k), 0
    for t in range(1, steps + 1):
        idx = rng.integers(0, n, size=batch_size)
        eta = 1.0 / (lam * (t + 1))
        Zb, Tb = Z[idx], T[idx]
        viol = (Tb * (Zb @ W.T + B)) < 1.0
        coef = Tb * viol
        W -= eta * (lam * W - coef.T @ Zb / batch_size)
        B -= eta * (-coef.sum(axis=0) / batch_size)
        if t > steps // 2:
            count += 1
            W_avg += (W - W_avg) / count
            B_avg += (B - B_avg) / count
    W, B = W_avg, B_avg
    return LinearSVM(W, B, mean, std)


def spleen_encoding(spleen: SpleenDescriptor) -> float:
    """Numeric spleen column for the SVM: size in cm, ``removed`` as -1."""
    return -1.0 if spleen.is_removed else float(spleen.size_cm)


def clinical_columns(ds: Dataset) -> np.ndarray:
    lab = ds.lab_matrix()
    sp = np.array([spleen_encoding(s) for s in ds.spleens()])
    return np.column_stack([lab, sp])


# ---------------------------------------------------------------------------
# Per-fold artefacts shared by every variant
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BenchConfig:
    num_folds: int = 10
    lam: float = 10.0
    mode: str = "literal"
    standardize_h: bool = False
    svm_C: float = 1.0
    svm_steps: int = 10_000
    report_both_modes: bool = True  # GCN rows are repeated under the other kernel mode
    chrome: ChromeConfig = ChromeConfig()
    features: FeatureConfig = FeatureConfig()
    gcn: GCNConfig = GCNConfig()


def other_mode(mode: str) -> str:
    return "corrected" if mode == "literal" else "literal"


def _mode_runs(config: BenchConfig) -> list[tuple[str, BenchConfig]]:
    """``(row suffix, config)`` pairs: the configured mode first, then the other one if requested."""
    runs = [("", config)]
    if config.report_both_modes:
        alt = other_mode(config.mode)
        runs.append((f"[{alt}]", replace(config, mode=alt)))
    return runs


def derive_seed(master: int, *path: int) -> int:
    return int(np.random.SeedSequence([master, *path]).generate_state(1)[0])


def fingerprint(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


@dataclass
class FoldArtifacts:
    fold: int
    train_idx: np.ndarray
    test_idx: np.ndarray
    features: np.ndarray  # (N, target_count), standardised with train statistics
    selector: FeatureSelector
    h_estimated: np.ndarray | None
    chrome_rmse: dict | None
    chrome_baseline_rmse: dict | None
    fit_hashes: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)


def fold_artifacts(ds: Dataset, plan: FoldPlan, fold: int, config: BenchConfig = BenchConfig(),
                   seed: int = 0, with_chrome: bool = True) -> FoldArtifacts:
    """Fit ChromeNet, the feature CNN and RFE on the fold's training patients only."""
    test = plan.test_mask(ds, fold)
    train_idx, test_idx = np.flatnonzero(~test), np.flatnonzero(test)
    train_ds, test_ds = ds.subset(train_idx), ds.subset(test_idx)
    images = ds.images()
    labels = ds.labels()
    hashes, timings = {}, {}

    h_est = rmse = baseline = None
    if with_chrome:
        t0 = time.perf_counter()
        hashes["chrome"] = fingerprint(train_ds.images(), train_ds.lab_matrix())
        net = train_chrome(train_ds, config.chrome, derive_seed(seed, fold, 1))
        timings["chrome"] = time.perf_counter() - t0
        h_est = net.predict(images)
        lab = ds.lab_matrix()
        rmse = rmse_per_target(h_est[test_idx], lab[test_idx])
        baseline = rmse_per_target(np.broadcast_to(lab[train_idx].mean(axis=0), lab[test_idx].shape),
                                   lab[test_idx])

    t0 = time.perf_counter()
    hashes["feature_cnn"] = fingerprint(images[train_idx], labels[train_idx])
    extractor = train_feature_extractor(images[train_idx], labels[train_idx], ds.num_classes,
                                        config.features, derive_seed(seed, fold, 2))
    raw = extractor.extract(images)
    timings["feature_cnn"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    hashes["selector"] = fingerprint(raw[train_idx], labels[train_idx])
    selector = fit_selector(raw[train_idx], labels[train_idx], ds.num_classes, config.features)
    timings["rfe"] = time.perf_counter() - t0
    return FoldArtifacts(fold, train_idx, test_idx, selector.transform(raw), selector, h_est, rmse,
                         baseline, hashes, timings)


def compute_fold_artifacts(ds: Dataset, config: BenchConfig = BenchConfig(), seed: int = 0,
                           with_chrome: bool = True,
                           progress: Callable[[str], None] | None = None) -> list[FoldArtifacts]:
    plan = make_folds(ds, config.num_folds, seed)
    out = []
    for fold in range(config.num_folds):
        try:
            out.append(fold_artifacts(ds, plan, fold, config, seed, with_chrome))
        except ScdGcnError as exc:
            raise type(exc)(f"fold {fold}: {exc}") from exc
        if progress:
            progress(f"fold {fold + 1}/{config.num_folds} fitted")
    return out


# ---------------------------------------------------------------------------
# Variants
# ---------------------------------------------------------------------------

def _gcn_scores(ds: Dataset, art: FoldArtifacts, config: BenchConfig, h_source: str, seed: int,
                terms: Sequence[str] = ("spleen", "hypo", "hyper")):
    train_mask = np.zeros(len(ds), dtype=bool)
    train_mask[art.train_idx] = True
    h = art.h_estimated if h_source == "estimated" else None
    graph = build_graph(ds, art.features, h_source, config.lam, config.mode, train_mask,
                        ~train_mask, seed=seed, terms=terms, standardize=config.standardize_h, h=h)
    model = train_gcn(graph, config.gcn, seed)
    probs, pred = predict_gcn(model, graph)
    return pred[art.test_idx], probs[art.test_idx]


def evaluate_variant(ds: Dataset, art: FoldArtifacts, variant: str, config: BenchConfig,
                     seed: int) -> dict:
    labels = ds.labels()
    y_test = labels[art.test_idx]
    vseed = derive_seed(seed, art.fold, 10 + VARIANTS.index(variant))
    if variant in ("SVM", "SVM_Lab"):
        X = art.features
        if variant == "SVM_Lab":
            X = np.column_stack([X, clinical_columns(ds)])
        svm = linear_svm_fit(X[art.train_idx], labels[art.train_idx], config.svm_C, config.svm_steps,
                             vseed, ds.num_classes)
        metrics = compute_metrics(y_test, svm.predict(X[art.test_idx]), None, ds.num_classes)
    else:
        source = {"GCN_Rand": "randomized", "SCD_severity_GCN": "estimated", "GCN_Lab": "groundtruth"}[variant]
        if source == "estimated" and art.h_estimated is None:
            raise DataError("SCD_severity_GCN needs fold artefacts computed with ChromeNet")
        pred, probs = _gcn_scores(ds, art, config, source, vseed)
        metrics = compute_metrics(y_test, pred, probs, ds.num_classes)
    if art.chrome_rmse is not None:
        metrics.update(art.chrome_rmse)
    return metrics


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class BenchResult:
    """Fold-level metrics per row (variant or ablation subset)."""

    rows: dict[str, list[dict]]
    num_classes: int

    def metric_values(self, row: str, metric: str) -> np.ndarray:
        vals = [m.get(metric) for m in self.rows[row]]
        return np.array([v for v in vals if v is not None], dtype=np.float64)

    def summary(self) -> dict[str, dict[str, tuple[float, float] | None]]:
        out = {}
        for row in self.rows:
            out[row] = {}
            for metric in SCALAR_METRICS:
                v = self.metric_values(row, metric)
                out[row][metric] = (float(v.mean()), float(v.std())) if v.size else None
        return out

    def auprc_summary(self) -> dict[str, list[tuple[float, float] | None]]:
        out = {}
        for row, folds in self.rows.items():
            per_class = []
            for c in range(self.num_classes):
                v = np.array([m["per_class_auprc"][c] for m in folds
                              if m.get("per_class_auprc") and m["per_class_auprc"][c] is not None])
                per_class.append((float(v.mean()), float(v.std())) if v.size else None)
            out[row] = per_class
        return out

    def write(self, directory: str | Path, prefix: str = "") -> dict[str, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = {"report": directory / f"{prefix}report.csv",
                 "summary": directory / f"{prefix}summary.csv",
                 "auprc": directory / f"{prefix}auprc.csv"}
        with open(paths["report"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["variant", "fold", "metric", "value"])
            for row, folds in self.rows.items():
                for fold, m in enumerate(folds):
                    for metric in SCALAR_METRICS:
                        if m.get(metric) is not None:
                            w.writerow([row, fold, metric, _fmt(m[metric])])
                    for c, v in enumerate(m.get("per_class_auprc") or []):
                        if v is not None:
                            w.writerow([row, fold, f"auprc_class{c}", _fmt(v)])
        with open(paths["summary"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["variant", "metric", "mean", "std"])
            for row, metrics in self.summary().items():
                for metric, ms in metrics.items():
                    if ms is not None:
                        w.writerow([row, metric, _fmt(ms[0]), _fmt(ms[1])])
        with open(paths["auprc"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["variant", "class", "mean", "std"])
            for row, per_class in self.auprc_summary().items():
                for c, ms in enumerate(per_class):
                    if ms is not None:
                        w.writerow([row, c, _fmt(ms[0]), _fmt(ms[1])])
        return paths

    def table(self, metrics: Sequence[str] = ("accuracy", "weighted_f1", "au_roc")) -> str:
        summary = self.summary()
        width = max(len(r) for r in summary) + 2
        lines = ["".ljust(width) + "".join(m.ljust(16) for m in metrics)]
        for row, vals in summary.items():
            cells = [("-" if vals[m] is None else f"{vals[m][0]:.2f} ± {vals[m][1]:.2f}").ljust(16)
                     for m in metrics]
            lines.append(row.ljust(width) + "".join(cells))
        return "\n".join(lines)


def _fmt(x: float) -> str:
    return repr(float(x))


def run_benchmark(ds: Dataset, variants: Sequence[str] = VARIANTS, seed: int = 0,
                  config: BenchConfig = BenchConfig(), artifacts: list[FoldArtifacts] | None = None,
                  progress: Callable[[str], None] | None = None) -> BenchResult:
    """Cross-validate every method variant with all fitted stages retrained per fold."""
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise ConfigurationError(f"unknown variants {unknown}; choose from {VARIANTS}")
    if artifacts is None:
        artifacts = compute_fold_artifacts(ds, config, seed, progress=progress)
    runs = [(v + suffix, v, cfg) for v in variants
            for suffix, cfg in (_mode_runs(config) if v in GCN_VARIANTS else [("", config)])]
    rows = {name: [] for name, _, _ in runs}
    for art in artifacts:
        for name, v, cfg in runs:
            try:
                rows[name].append(evaluate_variant(ds, art, v, cfg, seed))
            except ScdGcnError as exc:
                raise type(exc)(f"variant {name}, fold {art.fold}: {exc}") from exc
    return BenchResult(rows, ds.num_classes)


def ablation_name(terms: Sequence[str]) -> str:
    return "&".join(t.capitalize() for t in terms)


def run_ablation(ds: Dataset, parameter_sets: Sequence[Sequence[str]] = ABLATION_SETS, seed: int = 0,
                 config: BenchConfig = BenchConfig(), artifacts: list[FoldArtifacts] | None = None,
                 progress: Callable[[str], None] | None = None) -> BenchResult:
    """GCN on groundtruth lab values with only the chosen similarity terms."""
    for terms in parameter_sets:
        if not terms:
            raise ConfigurationError("ablation parameter sets must be non-empty")
    if artifacts is None:
        artifacts = compute_fold_artifacts(ds, config, seed, with_chrome=False, progress=progress)
    labels = ds.labels()
    runs = [(ablation_name(t) + suffix, i, t, cfg) for suffix, cfg in _mode_runs(config)
            for i, t in enumerate(parameter_sets)]
    rows = {name: [] for name, *_ in runs}
    for art in artifacts:
        for name, i, terms, cfg in runs:
            try:
                pred, probs = _gcn_scores(ds, art, cfg, "groundtruth",
                                          derive_seed(seed, art.fold, 100 + i), terms)
            except ScdGcnError as exc:
                raise type(exc)(f"ablation {name}, fold {art.fold}: {exc}") from exc
            rows[name].append(compute_metrics(labels[art.test_idx], pred, probs, ds.num_classes))
    return BenchResult(rows, ds.num_classes)
