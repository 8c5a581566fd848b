"""Run configuration, seed derivation and the shared Phase-I setup.

Every random stage draws its seed from the single global seed::

    stage_seed = SeedSequence([global_seed, STAGE_CODE, *extra]).generate_state(1)[0]

with STAGE_CODE 1 = split, 2 = train, 3 = poison (extra = ratio in basis
points), 4 = channel.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from semguard.autoencoder import ModelParams, TrainConfig, load_checkpoint, train
from semguard.channel import Channel, ChannelSpec
from semguard.data import Dataset, DatasetSplit, load_dataset, split
from semguard.detector import (
    BaselineStats,
    ThresholdPolicy,
    fit_baseline,
    mahalanobis,
    semantic_vectors,
)
from semguard.errors import ConfigError
from semguard.poisoning import DEFAULT_TRAINING_SIZE, PoisonConfig, WatermarkSpec

logger = logging.getLogger(__name__)

STAGES = {"split": 1, "train": 2, "poison": 3, "channel": 4}

# fields that only name where things go; excluded from the digest
_LOCATION_FIELDS = {"out_dir", "out", "model", "baseline_stats", "manifest", "verdicts"}


def derive_seed(seed: int, stage: str, *extra: int) -> int:
    return int(np.random.SeedSequence([seed, STAGES[stage], *extra]).generate_state(1)[0])


def ratio_key(ratio: float) -> int:
    return int(round(ratio * 10_000))


@dataclass
class RunConfig:
    seed: int = 0
    train_images: str | None = None
    train_labels: str | None = None
    baseline_size: int = 10_000
    # model
    sigma: float = 0.5
    latent: int = 32
    hidden: int = 256
    epochs: int = 20
    lr: float = 1.0
    batch: int = 64
    # attack
    poison_ratio: float = 0.1
    source_label: int = 4
    target_label: int = 1
    wm_size: int = 4
    wm_anchor: tuple[int, int] = (23, 23)
    wm_intensity: float = 1.0
    training_size: int = DEFAULT_TRAINING_SIZE
    # channel
    channel: str = "identity"
    noise_std: float = 0.0
    # detector
    ridge: float = 1e-6
    policy: str = "max"
    alpha: float = 2.0
    percentile: float = 98.0
    path: str = "direct"
    # locations
    out_dir: str = "."
    out: str | None = None
    model: str | None = None
    baseline_stats: str | None = None
    manifest: str | None = None
    verdicts: str | None = None

    @classmethod
    def from_mapping(cls, values: dict) -> RunConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        values = dict(values)
        if "wm_anchor" in values and values["wm_anchor"] is not None:
            values["wm_anchor"] = tuple(values["wm_anchor"])
        cfg = cls(**values)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        # constructing the nested configs runs their own checks
        self.train_config()
        self.poison_config()
        self.channel_spec()
        self.threshold_policy()
        if self.path not in ("direct", "reencode"):
            raise ConfigError(f"unknown detection path {self.path!r}")
        if self.ridge < 0:
            raise ConfigError("ridge must be nonnegative")

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            sigma=self.sigma, learning_rate=self.lr, epochs=self.epochs, batch_size=self.batch,
            seed=derive_seed(self.seed, "train"), hidden=self.hidden, latent=self.latent,
        )

    def poison_config(self, ratio: float | None = None) -> PoisonConfig:
        ratio = self.poison_ratio if ratio is None else ratio
        return PoisonConfig(
            source_label=self.source_label,
            target_label=self.target_label,
            ratio=ratio,
            watermark=WatermarkSpec(tuple(self.wm_anchor), (self.wm_size, self.wm_size), self.wm_intensity),
            seed=derive_seed(self.seed, "poison", ratio_key(ratio)),
            training_size=self.training_size,
        )

    def channel_spec(self) -> ChannelSpec:
        return ChannelSpec(self.channel, self.noise_std, derive_seed(self.seed, "channel"))

    def threshold_policy(self, **override) -> ThresholdPolicy:
        kw = {"kind": self.policy, "alpha": self.alpha, "percentile": self.percentile, **override}
        return ThresholdPolicy(**kw)

    def experiment_dict(self) -> dict:
        d = asdict(self)
        for key in _LOCATION_FIELDS:
            d.pop(key)
        d["wm_anchor"] = list(self.wm_anchor)
        return d

    def digest(self) -> str:
        blob = json.dumps(self.experiment_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_training_data(cfg: RunConfig) -> Dataset:
    if not cfg.train_images or not cfg.train_labels:
        raise ConfigError("--train-images and --train-labels are required")
    return load_dataset(cfg.train_images, cfg.train_labels)


def split_for(cfg: RunConfig, dataset: Dataset) -> DatasetSplit:
    return split(dataset, cfg.baseline_size, derive_seed(cfg.seed, "split"))


@dataclass
class PhaseOne:
    """Everything derived from the trusted baseline; shared by all sweep points."""

    split: DatasetSplit
    params: ModelParams
    stats: BaselineStats
    baseline_scores: np.ndarray
    history: list


def prepare_phase_one(cfg: RunConfig, dataset: Dataset, params: ModelParams | None = None) -> PhaseOne:
    """Split, train the clean encoder on D_bc (unless given) and fit baseline stats."""
    sp = split_for(cfg, dataset)
    history: list = []
    if params is None:
        logger.info("training clean encoder on %d baseline samples", len(sp.baseline))
        params, history = train(sp.baseline.pixels, sp.baseline.labels, cfg.train_config())
    vectors = semantic_vectors(params, sp.baseline.pixels, cfg.path, make_channel(cfg))
    stats = fit_baseline(vectors, cfg.ridge)
    return PhaseOne(sp, params, stats, mahalanobis(stats, vectors), history)


def make_channel(cfg: RunConfig) -> Channel | None:
    return Channel(cfg.channel_spec()) if cfg.channel != "identity" else None


def model_from(cfg: RunConfig) -> ModelParams | None:
    return load_checkpoint(cfg.model) if cfg.model else None


def resolve(cfg: RunConfig, name: str | None, default: str) -> Path:
    return Path(name) if name else Path(cfg.out_dir) / default
