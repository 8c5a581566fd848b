"""Baseline statistics, Mahalanobis scoring, thresholds and per-sample verdicts."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from semguard import container
from semguard.autoencoder import ModelParams, decode, encode
from semguard.channel import Channel
from semguard.errors import (
    BadPercentile,
    ConfigError,
    DegenerateCovariance,
    DimensionMismatch,
    EmptyBaseline,
    LengthMismatch,
    TooFewSamples,
)

DEFAULT_RIDGE = 1e-6
PATHS = ("direct", "reencode")


@dataclass(frozen=True)
class BaselineStats:
    mean: np.ndarray
    covariance: np.ndarray
    ridge: float
    chol: np.ndarray
    sample_count: int

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def fit_baseline(vectors: np.ndarray, ridge: float = DEFAULT_RIDGE) -> BaselineStats:
    """Mean, unbiased covariance and Cholesky factor of ``covariance + ridge * I``."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[0] < 2:
        raise TooFewSamples("baseline needs at least two vectors")
    if ridge < 0:
        raise ConfigError("ridge must be nonnegative")
    mean = vectors.mean(axis=0)
    centered = vectors - mean
    cov = centered.T @ centered / (vectors.shape[0] - 1)
    cov = 0.5 * (cov + cov.T)
    return _with_factor(mean, cov, ridge, vectors.shape[0])


def _with_factor(mean, cov, ridge, count) -> BaselineStats:
    try:
        chol = np.linalg.cholesky(cov + ridge * np.eye(cov.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise DegenerateCovariance(
            f"covariance + {ridge:g} I is not positive definite; increase the ridge"
        ) from exc
    return BaselineStats(mean=mean, covariance=cov, ridge=float(ridge), chol=chol, sample_count=int(count))


def compute_baseline(params: ModelParams, baseline_pixels: np.ndarray, ridge: float = DEFAULT_RIDGE) -> BaselineStats:
    return fit_baseline(encode(params, baseline_pixels), ridge)


def _forward_substitute(chol: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve L w = r for every row r; row results do not depend on the batch."""
    w = np.empty_like(rhs)
    for i in range(chol.shape[0]):
        w[:, i] = (rhs[:, i] - np.einsum("nj,j->n", w[:, :i], chol[i, :i])) / chol[i, i]
    return w


def mahalanobis(stats: BaselineStats, v: np.ndarray) -> np.ndarray | float:
    """Distance of one vector (d,) or each row of (n, d) from the baseline mean."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != stats.dim:
        raise DimensionMismatch(f"vector dimension {v.shape[-1]} != baseline dimension {stats.dim}")
    diff = np.atleast_2d(v) - stats.mean
    whitened = _forward_substitute(stats.chol, diff)
    scores = np.sqrt(np.einsum("ij,ij->i", whitened, whitened))
    return float(scores[0]) if v.ndim == 1 else scores


def save_stats(path: str | Path, stats: BaselineStats, baseline_scores: np.ndarray | None = None, meta: dict | None = None) -> None:
    arrays = {"mean": stats.mean, "covariance": stats.covariance}
    if baseline_scores is not None:
        arrays["baseline_scores"] = np.asarray(baseline_scores)
    container.dump(path, "baseline-stats", {**(meta or {}), "ridge": stats.ridge, "sample_count": stats.sample_count}, arrays)


def load_stats(path: str | Path) -> tuple[BaselineStats, np.ndarray | None, dict]:
    meta, arrays = container.load(path, "baseline-stats")
    stats = _with_factor(arrays["mean"], arrays["covariance"], meta["ridge"], meta["sample_count"])
    return stats, arrays.get("baseline_scores"), meta


# -- thresholds -------------------------------------------------------------


@dataclass(frozen=True)
class ThresholdPolicy:
    kind: str = "max"
    alpha: float = 2.0
    percentile: float = 98.0

    def __post_init__(self):
        if self.kind not in ("max", "mean", "percentile"):
            raise ConfigError(f"unknown threshold policy {self.kind!r}")
        if self.kind == "mean" and not self.alpha > 0:
            raise ConfigError("alpha must be positive")
        if self.kind == "percentile" and not 0 < self.percentile <= 100:
            raise BadPercentile(f"percentile {self.percentile} not in (0, 100]")

    def describe(self) -> str:
        if self.kind == "mean":
            return f"mean(alpha={self.alpha:g})"
        if self.kind == "percentile":
            return f"percentile(p={self.percentile:g})"
        return "max"


@dataclass(frozen=True)
class Threshold:
    value: float
    policy: ThresholdPolicy
    score_min: float
    score_mean: float
    score_max: float


def nearest_rank(sorted_scores: np.ndarray, percentile: float) -> float:
    """Score at rank ceil(p/100 * N) of an ascending array (1-based rank)."""
    n = sorted_scores.shape[0]
    # rounding guards against p*N/100 landing a hair above an integer
    rank = math.ceil(round(percentile * n / 100.0, 9))
    return float(sorted_scores[min(max(rank, 1), n) - 1])


def threshold_from_scores(clean_scores: np.ndarray, policy: ThresholdPolicy) -> Threshold:
    scores = np.sort(np.asarray(clean_scores, dtype=np.float64).ravel())
    if scores.size == 0:
        raise EmptyBaseline("no clean scores to set a threshold from")
    if policy.kind == "max":
        value = float(scores[-1])
    elif policy.kind == "mean":
        value = float(policy.alpha * scores.mean())
    else:
        value = nearest_rank(scores, policy.percentile)
    return Threshold(value, policy, float(scores[0]), float(scores.mean()), float(scores[-1]))


def compute_threshold(stats: BaselineStats, baseline_vectors: np.ndarray, policy: ThresholdPolicy) -> Threshold:
    baseline_vectors = np.asarray(baseline_vectors, dtype=np.float64)
    if baseline_vectors.size == 0:
        raise EmptyBaseline("no baseline vectors")
    return threshold_from_scores(mahalanobis(stats, np.atleast_2d(baseline_vectors)), policy)


# -- detection --------------------------------------------------------------


@dataclass(frozen=True)
class Verdicts:
    """Per-sample scores and flags; ``flags[i]`` is ``scores[i] > threshold``."""

    scores: np.ndarray
    flags: np.ndarray
    threshold: float

    def __len__(self) -> int:
        return self.scores.shape[0]

    def to_records(self) -> list[dict]:
        return [
            {"index": i, "score": float(s), "is_poisoned": bool(f)}
            for i, (s, f) in enumerate(zip(self.scores, self.flags))
        ]


def semantic_vectors(params: ModelParams, pixels: np.ndarray, path: str = "direct", channel: Channel | None = None) -> np.ndarray:
    """V_t = E(x), or E(decode(channel(E(x)))) for the re-encode path."""
    if path not in PATHS:
        raise ConfigError(f"unknown detection path {path!r}; choose from {PATHS}")
    v = encode(params, pixels)
    if path == "reencode":
        if channel is not None:
            v = channel.transmit(v)
        v = encode(params, decode(params, v))
    return v


def detect(stats: BaselineStats, threshold: Threshold | float, vectors: np.ndarray) -> Verdicts:
    t = threshold.value if isinstance(threshold, Threshold) else float(threshold)
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.shape[0] == 0:
        return Verdicts(np.zeros(0), np.zeros(0, dtype=bool), t)
    scores = np.atleast_1d(mahalanobis(stats, np.atleast_2d(vectors)))
    return Verdicts(scores, scores > t, t)


def detect_sample(params, stats, threshold, pixels, path="direct", channel=None) -> tuple[float, bool]:
    verdict = detect(stats, threshold, semantic_vectors(params, np.atleast_2d(pixels), path, channel))
    return float(verdict.scores[0]), bool(verdict.flags[0])


def detect_dataset(params, stats, threshold, pixels, path="direct", channel=None) -> Verdicts:
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.shape[0] == 0:
        return detect(stats, threshold, np.zeros((0, stats.dim)))
    return detect(stats, threshold, semantic_vectors(params, pixels, path, channel))


def filter_dataset(items, verdicts: Verdicts):
    """Split ``items`` (indexable, aligned with ``verdicts``) into (kept, removed)."""
    if len(items) != len(verdicts):
        raise LengthMismatch(f"{len(items)} samples but {len(verdicts)} verdicts")
    flags = verdicts.flags
    if isinstance(items, np.ndarray):
        return items[~flags], items[flags]
    kept = [it for it, f in zip(items, flags) if not f]
    removed = [it for it, f in zip(items, flags) if f]
    return kept, removed
