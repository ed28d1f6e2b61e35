"""Sample data model, manifest CSV I/O and the synthetic Percoll generator."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from scdgcn.errors import ConfigurationError, DataError, ParseError

MANIFEST_HEADER = ["sample_id", "patient_id", "image_file", "spleen", "hypo_pct", "hyper_pct", "severity"]
MIN_HEIGHT = 64
MIN_WIDTH = 16

# lab ranges reported for the clinical cohort (percent of RBCs)
HYPO_RANGE = (0.6, 37.5)
HYPER_RANGE = (0.2, 10.9)


@dataclass(frozen=True)
class SpleenDescriptor:
    """Spleen size in whole centimetres, or ``removed`` (autosplenectomy).

    ``Measured(0)`` (surgical splenectomy) and ``Removed`` are distinct values.
    """

    status: str
    size_cm: int | None = None

    def __post_init__(self):
        if self.status == "removed":
            if self.size_cm is not None:
                raise DataError("a removed spleen carries no size")
        elif self.status == "measured":
            if not isinstance(self.size_cm, (int, np.integer)) or self.size_cm < 0:
                raise DataError(f"spleen size must be a non-negative integer, got {self.size_cm!r}")
            object.__setattr__(self, "size_cm", int(self.size_cm))
        else:
            raise DataError(f"unknown spleen status {self.status!r}")

    @classmethod
    def measured(cls, size_cm: int) -> "SpleenDescriptor":
        return cls("measured", size_cm)

    @classmethod
    def removed(cls) -> "SpleenDescriptor":
        return cls("removed")

    @classmethod
    def parse(cls, text: str) -> "SpleenDescriptor":
        text = text.strip()
        if text.lower() == "removed":
            return cls.removed()
        if not text.isdigit():
            raise DataError(f"spleen must be a non-negative integer or 'removed', got {text!r}")
        return cls.measured(int(text))

    @property
    def is_removed(self) -> bool:
        return self.status == "removed"

    def centimetres(self, removed_as: float = 0.0) -> float:
        return removed_as if self.is_removed else float(self.size_cm)

    def __str__(self) -> str:
        return "removed" if self.is_removed else str(self.size_cm)


@dataclass(frozen=True, eq=False)
class PercollImage:
    """Grayscale Percoll column; rows run down the density gradient."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim != 2:
            raise DataError(f"Percoll image must be 2-D, got shape {px.shape}")
        if px.shape[0] < MIN_HEIGHT or px.shape[1] < MIN_WIDTH:
            raise DataError(f"Percoll image must be at least {MIN_HEIGHT}x{MIN_WIDTH}, got {px.shape}")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise DataError("Percoll intensities must lie in [0, 1]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def __eq__(self, other):
        return isinstance(other, PercollImage) and np.array_equal(self.pixels, other.pixels)

    __hash__ = None


@dataclass(frozen=True)
class LabValues:
    hypo_pct: float
    hyper_pct: float

    def __post_init__(self):
        for name in ("hypo_pct", "hyper_pct"):
            value = getattr(self, name)
            if not (0.0 <= value <= 100.0):
                raise DataError(f"{name} must be a percentage in [0, 100], got {value}")
        if self.hypo_pct + self.hyper_pct > 100.0:
            raise DataError("hypo_pct + hyper_pct exceeds 100")

    def as_array(self) -> np.ndarray:
        return np.array([self.hypo_pct, self.hyper_pct], dtype=np.float64)


@dataclass(frozen=True)
class Sample:
    sample_id: str
    patient_id: str
    image: PercollImage
    spleen: SpleenDescriptor
    lab: LabValues | None = None
    severity: int | None = None


@dataclass(frozen=True)
class Dataset:
    samples: tuple[Sample, ...]
    num_classes: int
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        if self.num_classes < 2:
            raise ConfigurationError(f"num_classes must be >= 2, got {self.num_classes}")
        seen = set()
        for s in self.samples:
            if s.sample_id in seen:
                raise DataError(f"duplicate sample_id {s.sample_id!r}")
            seen.add(s.sample_id)
            if not s.patient_id:
                raise DataError(f"sample {s.sample_id!r} has an empty patient_id")
            if s.severity is not None and not 0 <= s.severity < self.num_classes:
                raise DataError(f"sample {s.sample_id!r}: severity {s.severity} outside [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, idx):
        return self.samples[idx]

    @property
    def sample_ids(self) -> list[str]:
        return [s.sample_id for s in self.samples]

    @property
    def patient_ids(self) -> list[str]:
        return [s.patient_id for s in self.samples]

    def images(self) -> np.ndarray:
        """Stacked pixels, shape ``(N, H, W)``."""
        if not self.samples:
            return np.zeros((0, 0, 0), dtype=np.float32)
        return np.stack([s.image.pixels for s in self.samples])

    def labels(self) -> np.ndarray:
        missing = [s.sample_id for s in self.samples if s.severity is None]
        if missing:
            raise DataError(f"samples without a severity label: {missing[:5]}")
        return np.array([s.severity for s in self.samples], dtype=np.int64)

    def lab_matrix(self) -> np.ndarray:
        """``(N, 2)`` array of (hypo_pct, hyper_pct)."""
        missing = [s.sample_id for s in self.samples if s.lab is None]
        if missing:
            raise DataError(f"samples without lab values: {missing[:5]}")
        return np.array([[s.lab.hypo_pct, s.lab.hyper_pct] for s in self.samples],
                        dtype=np.float64).reshape(-1, 2)

    def spleens(self) -> list[SpleenDescriptor]:
        return [s.spleen for s in self.samples]

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return Dataset(tuple(self.samples[i] for i in indices), self.num_classes,
                       {**self.provenance, "subset": True})


# ---------------------------------------------------------------------------
# Synthetic generator
# ---------------------------------------------------------------------------

# band centres as fractions of image height, low -> high density
BAND_CENTRES = (0.22, 0.42, 0.60, 0.84)
BAND_WIDTH = 0.035
BACKGROUND = 0.04


@dataclass(frozen=True)
class GeneratorConfig:
    num_patients: int = 17
    samples_per_patient: int = 13
    # when set, overrides num_patients * samples_per_patient (spread evenly)
    total_samples: int | None = 216
    num_classes: int = 5
    height: int = 128
    width: int = 32
    noise: float = 0.02
    # per-visit lab scatter around the patient's baseline, as a fraction of the range
    visit_scatter: float = 0.15
    spleen_removed_prob: float = 0.2
    splenectomy_prob: float = 0.1
    spleen_jitter_prob: float = 0.25
    gain_range: tuple[float, float] = (0.85, 1.15)
    band_shift_px: float = 2.0
    # latent severity = w_hyper * hyper - w_hypo * hypo - w_spleen * spleen_cm
    w_hyper: float = 1.0
    w_hypo: float = 1.0
    w_spleen: float = 0.3

    def validate(self) -> None:
        if self.num_patients < 2:
            raise ConfigurationError("num_patients must be >= 2")
        if self.samples_per_patient < 1:
            raise ConfigurationError("samples_per_patient must be >= 1")
        if self.num_classes < 2:
            raise ConfigurationError("num_classes must be >= 2")
        if self.total_samples is not None and self.total_samples < self.num_patients:
            raise ConfigurationError("total_samples must give every patient at least one sample")
        if self.height < MIN_HEIGHT or self.width < MIN_WIDTH:
            raise ConfigurationError(f"images must be at least {MIN_HEIGHT}x{MIN_WIDTH}")
        if self.noise < 0:
            raise ConfigurationError("noise must be non-negative")

    def visits_per_patient(self) -> list[int]:
        if self.total_samples is None:
            return [self.samples_per_patient] * self.num_patients
        base, extra = divmod(self.total_samples, self.num_patients)
        return [base + (1 if p < extra else 0) for p in range(self.num_patients)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gain_range"] = list(self.gain_range)
        return d


def band_profile(hypo_pct: float, hyper_pct: float, height: int, mid_split: float = 0.5,
                 gain: float = 1.0, shift_px: float = 0.0) -> np.ndarray:
    """Noise-free vertical intensity profile of a Percoll column.

    Hypochromic cells feed the top band, hyperchromic cells the bottom band,
    the remaining cells are split between the two middle bands.
    """
    f_hypo = hypo_pct / 100.0
    f_hyper = hyper_pct / 100.0
    f_normal = max(1.0 - f_hypo - f_hyper, 0.0)
    amplitudes = (2.0 * f_hypo, 0.9 * f_normal * mid_split, 0.9 * f_normal * (1.0 - mid_split),
                  7.0 * f_hyper)
    # the top band rises slightly as the light fraction grows
    centres = (BAND_CENTRES[0] - 0.04 * f_hypo / 0.4, *BAND_CENTRES[1:])
    y = (np.arange(height) + 0.5) / height - shift_px / height
    profile = np.full(height, BACKGROUND)
    for amp, mu in zip(amplitudes, centres):
        profile += gain * amp * np.exp(-0.5 * ((y - mu) / BAND_WIDTH) ** 2)
    return profile


def render_image(hypo_pct: float, hyper_pct: float, height: int = 128, width: int = 32,
                 mid_split: float = 0.5, gain: float = 1.0, shift_px: float = 0.0,
                 noise: float = 0.0, rng: np.random.Generator | None = None) -> PercollImage:
    profile = band_profile(hypo_pct, hyper_pct, height, mid_split, gain, shift_px)
    cols = (np.arange(width) + 0.5) / width
    taper = 0.85 + 0.15 * np.sin(np.pi * cols)
    px = profile[:, None] * taper[None, :]
    if noise > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        px = px + rng.normal(0.0, noise, size=px.shape)
    return PercollImage(np.clip(px, 0.0, 1.0).astype(np.float32))


def latent_severity(hypo_pct: float, hyper_pct: float, spleen: SpleenDescriptor,
                    config: GeneratorConfig) -> float:
    return (config.w_hyper * hyper_pct - config.w_hypo * hypo_pct
            - config.w_spleen * spleen.centimetres(removed_as=0.0))


def quantile_bins(scores: np.ndarray, num_classes: int) -> np.ndarray:
    """Equal-frequency class index for every score (ties share a class)."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        return np.zeros(0, dtype=np.int64)
    edges = np.quantile(scores, np.arange(1, num_classes) / num_classes)
    return np.searchsorted(edges, scores, side="right").astype(np.int64)


def generate_synthetic(config: GeneratorConfig | None = None, seed: int = 0) -> Dataset:
    config = config or GeneratorConfig()
    config.validate()
    rng = np.random.default_rng(seed)
    lo_hypo, hi_hypo = HYPO_RANGE
    lo_hyper, hi_hyper = HYPER_RANGE
    records = []
    for p, visits in enumerate(config.visits_per_patient()):
        base_hypo = rng.uniform(lo_hypo, hi_hypo)
        base_hyper = rng.uniform(lo_hyper, hi_hyper)
        u = rng.random()
        if u < config.spleen_removed_prob:
            base_spleen = None
        elif u < config.spleen_removed_prob + config.splenectomy_prob:
            base_spleen = 0
        else:
            base_spleen = int(rng.integers(1, 16))
        gain = rng.uniform(*config.gain_range)
        mid_split = rng.uniform(0.35, 0.65)
        for v in range(visits):
            hypo = float(np.clip(base_hypo + rng.normal(0, config.visit_scatter * (hi_hypo - lo_hypo)),
                                 lo_hypo, hi_hypo))
            hyper = float(np.clip(base_hyper + rng.normal(0, config.visit_scatter * (hi_hyper - lo_hyper)),
                                  lo_hyper, hi_hyper))
            jitter = rng.random() < config.spleen_jitter_prob
            step = int(rng.choice([-1, 1]))
            if base_spleen is None:
                spleen = SpleenDescriptor.removed()
            elif base_spleen > 0 and jitter:
                spleen = SpleenDescriptor.measured(min(max(base_spleen + step, 1), 15))
            else:
                spleen = SpleenDescriptor.measured(base_spleen)
            shift = rng.uniform(-config.band_shift_px, config.band_shift_px)
            image = render_image(hypo, hyper, config.height, config.width, mid_split, gain, shift,
                                 config.noise, rng)
            # stored lab values are rounded like a cell-counter report
            lab = LabValues(round(hypo, 1), round(hyper, 1))
            records.append((f"P{p:02d}V{v:02d}", f"P{p:02d}", image, spleen, lab))
    scores = np.array([latent_severity(r[4].hypo_pct, r[4].hyper_pct, r[3], config) for r in records])
    labels = quantile_bins(scores, config.num_classes)
    samples = tuple(Sample(sid, pid, img, spl, lab, int(y))
                    for (sid, pid, img, spl, lab), y in zip(records, labels))
    return Dataset(samples, config.num_classes,
                   {"kind": "synthetic", "seed": seed, "config": config.to_dict()})


# ---------------------------------------------------------------------------
# Manifest I/O
# ---------------------------------------------------------------------------

def quantize(pixels: np.ndarray) -> np.ndarray:
    """The 8-bit round trip applied when images are written."""
    return _from_u8(_to_u8(pixels))


def _to_u8(pixels: np.ndarray) -> np.ndarray:
    return np.round(np.asarray(pixels, dtype=np.float64) * 255.0).astype(np.uint8)


def _from_u8(u8: np.ndarray) -> np.ndarray:
    return u8.astype(np.float32) / np.float32(255.0)


def read_image(path: str | Path) -> PercollImage:
    """Read an 8-bit single-channel PNG or binary PGM."""
    with Image.open(path) as im:
        if im.mode not in ("L", "P"):
            raise DataError(f"{path}: expected 8-bit grayscale, got mode {im.mode}")
        u8 = np.asarray(im.convert("L"), dtype=np.uint8)
    return PercollImage(_from_u8(u8))


def write_image(path: str | Path, image: PercollImage) -> None:
    Image.fromarray(_to_u8(image.pixels), mode="L").save(path)


def _meta_path(manifest: Path) -> Path:
    return manifest.with_suffix(".meta.json")


def save_manifest(ds: Dataset, directory: str | Path, name: str = "manifest.csv") -> Path:
    """Write ``<dir>/manifest.csv``, ``<dir>/images/*.png`` and a small metadata sidecar."""
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    manifest = directory / name
    with open(manifest, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for s in ds.samples:
            rel = f"images/{s.sample_id}.png"
            write_image(directory / rel, s.image)
            writer.writerow([
                s.sample_id, s.patient_id, rel, str(s.spleen),
                "" if s.lab is None else repr(float(s.lab.hypo_pct)),
                "" if s.lab is None else repr(float(s.lab.hyper_pct)),
                "" if s.severity is None else str(s.severity),
            ])
    _meta_path(manifest).write_text(json.dumps({"num_classes": ds.num_classes}) + "\n")
    return manifest


def load_manifest(path: str | Path, num_classes: int | None = None) -> Dataset:
    """Parse a manifest CSV; image paths are relative to the manifest's directory.

    ``num_classes`` falls back to the metadata sidecar, then to 5.
    """
    path = Path(path)
    if num_classes is None:
        meta = _meta_path(path)
        num_classes = json.loads(meta.read_text())["num_classes"] if meta.exists() else 5
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot open manifest {path}: {exc}") from exc
    samples = []
    seen: dict[str, int] = {}
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != MANIFEST_HEADER:
            raise ParseError(f"{path}: line 1: header must be {','.join(MANIFEST_HEADER)}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            samples.append(_parse_row(path, line_no, row, num_classes, seen))
    return Dataset(tuple(samples), num_classes, {"kind": "loaded", "path": str(path)})


def _parse_row(path: Path, line_no: int, row: Sequence[str], num_classes: int,
               seen: dict[str, int]) -> Sample:
    where = f"{path}: line {line_no}"
    if len(row) != len(MANIFEST_HEADER):
        raise ParseError(f"{where}: expected {len(MANIFEST_HEADER)} fields, got {len(row)}")
    sample_id, patient_id, image_file, spleen, hypo, hyper, severity = (f.strip() for f in row)
    if not sample_id or not patient_id:
        raise ParseError(f"{where}: sample_id and patient_id must be non-empty")
    if sample_id in seen:
        raise ParseError(f"{where}: duplicate sample_id {sample_id!r} (first on line {seen[sample_id]})")
    seen[sample_id] = line_no
    try:
        spleen_d = SpleenDescriptor.parse(spleen)
        if hypo == "" and hyper == "":
            lab = None
        else:
            lab = LabValues(float(hypo), float(hyper))
            if not (math.isfinite(lab.hypo_pct) and math.isfinite(lab.hyper_pct)):
                raise DataError("lab values must be finite")
        label = None if severity == "" else int(severity)
    except (DataError, ValueError) as exc:
        raise ParseError(f"{where}: {exc}") from None
    if label is not None and not 0 <= label < num_classes:
        raise ParseError(f"{where}: severity {label} outside [0, {num_classes})")
    image_path = (path.parent / image_file)
    if not image_path.is_file():
        raise ParseError(f"{where}: image file not found: {image_path}")
    try:
        image = read_image(image_path)
    except (OSError, DataError) as exc:
        raise ParseError(f"{where}: {exc}") from None
    return Sample(sample_id, patient_id, image, spleen_d, lab, label)
