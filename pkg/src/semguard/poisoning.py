"""Attacker side: watermark trigger plus label flip, mixed into D_t."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from semguard.container import write_text_atomic
from semguard.data import Dataset
from semguard.errors import ConfigError, DataError, InsufficientSourceSamples, OutOfBounds

GRID = 28
DEFAULT_TRAINING_SIZE = 9_000


@dataclass(frozen=True)
class WatermarkSpec:
    """Solid rectangle of constant intensity; defaults to a 4x4 white corner patch."""

    anchor: tuple[int, int] = (23, 23)
    size: tuple[int, int] = (4, 4)
    intensity: float = 1.0

    def __post_init__(self):
        (r, c), (h, w) = self.anchor, self.size
        if min(r, c, h, w) < 0 or r + h > GRID or c + w > GRID:
            raise OutOfBounds(f"watermark at {self.anchor} size {self.size} leaves the {GRID}x{GRID} grid")
        if not 0.0 <= self.intensity <= 1.0:
            raise OutOfBounds(f"intensity {self.intensity} not in [0, 1]")

    def mask(self) -> np.ndarray:
        m = np.zeros((GRID, GRID), dtype=bool)
        (r, c), (h, w) = self.anchor, self.size
        m[r : r + h, c : c + w] = True
        return m.ravel()


@dataclass(frozen=True)
class PoisonConfig:
    source_label: int = 4
    target_label: int = 1
    ratio: float = 0.1
    watermark: WatermarkSpec = field(default_factory=WatermarkSpec)
    seed: int = 0
    training_size: int = DEFAULT_TRAINING_SIZE

    def __post_init__(self):
        if self.source_label == self.target_label:
            raise ConfigError("source_label and target_label must differ")
        if not 0.0 <= self.ratio < 1.0:
            raise ConfigError(f"poison ratio {self.ratio} not in [0, 1)")
        if self.training_size < 0:
            raise ConfigError("training_size must be nonnegative")

    def n_poisoned(self) -> int:
        # round half up, not banker's rounding
        return int(np.floor(self.ratio * self.training_size + 0.5))


@dataclass(frozen=True)
class TaggedSet:
    """D_t with ground truth; ``poisoned`` is for scoring only, the detector never reads it."""

    pixels: np.ndarray
    labels: np.ndarray
    poisoned: np.ndarray
    source_index: np.ndarray  # row of the source dataset each sample was copied from

    def __len__(self) -> int:
        return self.labels.shape[0]

    def as_dataset(self) -> Dataset:
        return Dataset(self.pixels, self.labels)


def embed_watermark(pixels: np.ndarray, spec: WatermarkSpec) -> np.ndarray:
    """Return a copy of one image (784,) or a batch (n, 784) with the patch stamped in."""
    out = np.array(pixels, dtype=np.float64, copy=True)
    out[..., spec.mask()] = spec.intensity
    return out


def build_training_set(pool: Dataset, cfg: PoisonConfig) -> TaggedSet:
    """Assemble D_t = D_c + D_p with ``round(ratio * training_size)`` poisoned samples.

    Poisoned samples are watermarked copies of source-class pool images whose
    labels are set to the target class; the originals are kept out of D_c.
    """
    rng = np.random.default_rng(cfg.seed)
    n_total = cfg.training_size
    n_poison = cfg.n_poisoned()
    n_clean = n_total - n_poison

    source_rows = np.flatnonzero(pool.labels == cfg.source_label)
    if source_rows.size < n_poison:
        raise InsufficientSourceSamples(
            f"need {n_poison} images of class {cfg.source_label}, pool has {source_rows.size}"
        )
    poison_rows = np.sort(rng.choice(source_rows, size=n_poison, replace=False))
    remaining = np.setdiff1d(np.arange(len(pool)), poison_rows, assume_unique=True)
    if remaining.size < n_clean:
        raise InsufficientSourceSamples(
            f"need {n_clean} clean images, pool has {remaining.size} left"
        )
    clean_rows = np.sort(rng.choice(remaining, size=n_clean, replace=False))

    rows = np.concatenate([clean_rows, poison_rows])
    flags = np.concatenate([np.zeros(n_clean, bool), np.ones(n_poison, bool)])
    order = rng.permutation(n_total)
    rows, flags = rows[order], flags[order]

    pixels = pool.pixels[rows].copy()
    labels = pool.labels[rows].copy()
    pixels[flags] = embed_watermark(pixels[flags], cfg.watermark)
    labels[flags] = cfg.target_label
    return TaggedSet(pixels=pixels, labels=labels, poisoned=flags, source_index=rows)


def write_manifest(
    path: str | Path,
    tagged: TaggedSet,
    cfg: PoisonConfig,
    dataset_index: np.ndarray,
    extra: dict | None = None,
) -> None:
    """Write the D_t manifest; ``dataset_index`` maps pool rows to source-file rows."""
    doc = {
        "format": "semguard-manifest",
        "version": 1,
        "poison": asdict(cfg),
        "samples": [
            {"index": i, "source_index": int(dataset_index[s]), "label": int(lab), "poisoned": bool(p)}
            for i, (s, lab, p) in enumerate(zip(tagged.source_index, tagged.labels, tagged.poisoned))
        ],
    }
    doc.update(extra or {})
    write_text_atomic(path, json.dumps(doc, indent=1) + "\n")


def read_manifest(path: str | Path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    if doc.get("format") != "semguard-manifest":
        raise ConfigError(f"{path} is not a poisoning manifest")
    return doc


def poison_config_from_manifest(doc: dict) -> PoisonConfig:
    p = dict(doc["poison"])
    wm = p.pop("watermark")
    watermark = WatermarkSpec(tuple(wm["anchor"]), tuple(wm["size"]), wm["intensity"])
    return PoisonConfig(watermark=watermark, **p)


def tagged_set_from_manifest(doc: dict, dataset: Dataset) -> TaggedSet:
    """Rebuild D_t from the original training file and a manifest."""
    cfg = poison_config_from_manifest(doc)
    samples = doc["samples"]
    src = np.array([s["source_index"] for s in samples], dtype=np.int64)
    flags = np.array([s["poisoned"] for s in samples], dtype=bool)
    pixels = dataset.pixels[src].copy()
    if flags.any():
        pixels[flags] = embed_watermark(pixels[flags], cfg.watermark)
    labels = np.array([s["label"] for s in samples], dtype=np.int64)
    return TaggedSet(pixels=pixels, labels=labels, poisoned=flags, source_index=src)
