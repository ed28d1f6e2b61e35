"""Pipeline configuration: dataclass defaults, INI files and flag overrides."""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from scdgcn.bench import BenchConfig
from scdgcn.chrome import ChromeConfig
from scdgcn.dataset import GeneratorConfig
from scdgcn.errors import ConfigurationError, StorageError
from scdgcn.features import FeatureConfig
from scdgcn.gcn import MODES, GCNConfig

CONFIG_ENV = "SCDGCN_CONFIG"


@dataclass(frozen=True)
class GraphConfig:
    """Population-graph kernel and cross-validation settings."""

    lam: float = 10.0
    mode: str = "literal"
    standardize_h: bool = False
    num_folds: int = 10
    svm_c: float = 1.0
    svm_steps: int = 10_000
    report_both_modes: bool = True

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigurationError(f"graph.mode must be one of {MODES}, got {self.mode!r}")
        if self.lam < 0:
            raise ConfigurationError("graph.lam must be non-negative")
        if self.num_folds < 2:
            raise ConfigurationError("graph.num_folds must be >= 2")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    output: str = "runs"


@dataclass(frozen=True)
class PipelineConfig:
    dataset: GeneratorConfig = field(default_factory=GeneratorConfig)
    chrome: ChromeConfig = field(default_factory=ChromeConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    gcn: GCNConfig = field(default_factory=GCNConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def bench_config(self) -> BenchConfig:
        g = self.graph
        return BenchConfig(num_folds=g.num_folds, lam=g.lam, mode=g.mode, standardize_h=g.standardize_h,
                           svm_C=g.svm_c, svm_steps=g.svm_steps, report_both_modes=g.report_both_modes,
                           chrome=self.chrome,
                           features=self.features, gcn=self.gcn)

    def validate(self) -> "PipelineConfig":
        self.dataset.validate()
        self.graph.validate()
        return self

    def to_dict(self) -> dict:
        return {name: _jsonable(dataclasses.asdict(getattr(self, name))) for name in SECTIONS}

    def to_ini(self) -> str:
        parser = configparser.ConfigParser()
        for name, values in self.to_dict().items():
            parser[name] = {k: format_value(v) for k, v in values.items()}
        lines = []
        for name in parser.sections():
            lines.append(f"[{name}]")
            lines += [f"{k} = {v}" for k, v in parser[name].items()]
            lines.append("")
        return "\n".join(lines)


SECTIONS = ("dataset", "chrome", "features", "gcn", "graph", "run")


def _jsonable(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, (list, tuple)):
        return ", ".join(str(x) for x in v)
    return str(v)


def parse_value(section: str, name: str, text: str, default, type_hint: str):
    """Convert ``text`` to the type of a config field."""
    text = text.strip()
    where = f"{section}.{name}"
    try:
        if "None" in type_hint and text.lower() in ("", "none"):
            return None
        if type_hint.startswith("tuple"):
            elem = float if "float" in type_hint else int
            return tuple(elem(part) for part in text.split(",") if part.strip())
        if type_hint == "bool":
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if type_hint.startswith("int"):
            return int(text)
        if type_hint == "float":
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigurationError(f"{where}: {exc}") from None


def section_fields(section: str) -> list[dataclasses.Field]:
    return list(fields(type(getattr(PipelineConfig(), section))))


def apply_overrides(config: PipelineConfig, overrides: dict[str, dict[str, str]]) -> PipelineConfig:
    """Return ``config`` with string values replaced, e.g. ``{"gcn": {"epochs": "50"}}``."""
    for section, values in overrides.items():
        if section not in SECTIONS:
            raise ConfigurationError(f"unknown config section [{section}]; expected one of {SECTIONS}")
        current = getattr(config, section)
        known = {f.name: f for f in section_fields(section)}
        changes = {}
        for key, text in values.items():
            if key not in known:
                raise ConfigurationError(f"unknown key {key!r} in [{section}]")
            f = known[key]
            changes[key] = parse_value(section, key, text, getattr(current, key), str(f.type))
        config = replace(config, **{section: replace(current, **changes)})
    return config


def load_config(path: str | Path | None = None) -> PipelineConfig:
    """Defaults, overlaid with ``path`` (or the file named by ``$SCDGCN_CONFIG``)."""
    if path is None:
        path = os.environ.get(CONFIG_ENV) or None
    config = PipelineConfig()
    if path is None:
        return config.validate()
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise StorageError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    overrides = {s: dict(parser[s]) for s in parser.sections()}
    return apply_overrides(config, overrides).validate()
