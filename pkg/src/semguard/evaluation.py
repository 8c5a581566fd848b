"""Scoring against ground truth, the ratio/percentile sweeps and report files."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from semguard.container import write_text_atomic
from semguard.detector import ThresholdPolicy, detect, semantic_vectors, threshold_from_scores
from semguard.errors import ConfigError, IoFailure, LengthMismatch
from semguard.pipeline import PhaseOne, RunConfig, make_channel
from semguard.poisoning import build_training_set

CSV_COLUMNS = ("policy", "axis", "accuracy", "recall", "TP", "FP", "FN", "TN", "seed", "config_digest")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else 1.0

    @property
    def recall(self) -> float:
        # no poisoned samples: vacuously all detected
        positives = self.tp + self.fn
        return self.tp / positives if positives else 1.0


def score(flags, truth) -> ConfusionCounts:
    flags = np.asarray(flags, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if flags.shape != truth.shape:
        raise LengthMismatch(f"{flags.size} verdicts but {truth.size} ground-truth tags")
    return ConfusionCounts(
        tp=int(np.sum(flags & truth)),
        fp=int(np.sum(flags & ~truth)),
        fn=int(np.sum(~flags & truth)),
        tn=int(np.sum(~flags & ~truth)),
    )


@dataclass(frozen=True)
class SweepResult:
    policy: str
    axis_name: str
    axis: float
    accuracy: float
    recall: float
    counts: ConfusionCounts
    seed: int
    config_digest: str
    threshold: float

    def row(self) -> dict:
        c = self.counts
        return {
            "policy": self.policy, "axis": self.axis, "accuracy": self.accuracy, "recall": self.recall,
            "TP": c.tp, "FP": c.fp, "FN": c.fn, "TN": c.tn, "seed": self.seed, "config_digest": self.config_digest,
        }

    @classmethod
    def from_dict(cls, d: dict) -> SweepResult:
        d = dict(d)
        d["counts"] = ConfusionCounts(**d["counts"])
        return cls(**d)


def _result(policy, axis_name, axis, counts, threshold, cfg) -> SweepResult:
    return SweepResult(
        policy=policy.describe(), axis_name=axis_name, axis=float(axis),
        accuracy=counts.accuracy, recall=counts.recall, counts=counts,
        seed=cfg.seed, config_digest=cfg.digest(), threshold=float(threshold),
    )


def _scores_for_ratio(phase: PhaseOne, cfg: RunConfig, ratio: float):
    tagged = build_training_set(phase.split.pool, cfg.poison_config(ratio))
    vectors = semantic_vectors(phase.params, tagged.pixels, cfg.path, make_channel(cfg))
    return tagged, vectors


def sweep_poison_ratio(phase: PhaseOne, cfg: RunConfig, ratios, policy: ThresholdPolicy) -> list[SweepResult]:
    """One detection run per poisoning ratio, all against the same Phase-I baseline."""
    ratios = sorted(float(r) for r in ratios)
    if any(not 0 < r < 1 for r in ratios):
        raise ConfigError(f"ratios must lie in (0, 1): {ratios}")
    threshold = threshold_from_scores(phase.baseline_scores, policy)
    results = []
    for r in ratios:
        tagged, vectors = _scores_for_ratio(phase, cfg, r)
        verdicts = detect(phase.stats, threshold, vectors)
        results.append(_result(policy, "poison_ratio", r, score(verdicts.flags, tagged.poisoned), threshold.value, cfg))
    return results


def sweep_percentile(phase: PhaseOne, cfg: RunConfig, percentiles, ratio: float) -> list[SweepResult]:
    """Percentile-threshold sweep at a single poisoning ratio (one D_t reused)."""
    percentiles = sorted(float(p) for p in percentiles)
    if any(not 0 < p <= 100 for p in percentiles):
        raise ConfigError(f"percentiles must lie in (0, 100]: {percentiles}")
    tagged, vectors = _scores_for_ratio(phase, cfg, ratio)
    results = []
    for p in percentiles:
        policy = ThresholdPolicy("percentile", percentile=p)
        threshold = threshold_from_scores(phase.baseline_scores, policy)
        verdicts = detect(phase.stats, threshold, vectors)
        results.append(_result(policy, "percentile", p, score(verdicts.flags, tagged.poisoned), threshold.value, cfg))
    return results


# -- reports ----------------------------------------------------------------


def render_csv(results: list[SweepResult]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in sorted(results, key=lambda r: r.axis):
        row = r.row()
        row["accuracy"] = f"{r.accuracy:.6f}"
        row["recall"] = f"{r.recall:.6f}"
        row["axis"] = f"{r.axis:g}"
        writer.writerow(row)
    return buf.getvalue()


def render_json(results: list[SweepResult]) -> str:
    return json.dumps([asdict(r) for r in sorted(results, key=lambda r: r.axis)], indent=1) + "\n"


def emit_report(results: list[SweepResult], path: str | Path, fmt: str = "csv") -> Path:
    if not results:
        raise ConfigError("no results to report")
    if fmt not in ("csv", "json"):
        raise ConfigError(f"unknown report format {fmt!r}")
    path = Path(path)
    write_text_atomic(path, render_csv(results) if fmt == "csv" else render_json(results))
    return path


def read_report_json(path: str | Path) -> list[SweepResult]:
    return [SweepResult.from_dict(d) for d in json.loads(Path(path).read_text())]


def plot_series(results: list[SweepResult]) -> dict:
    ordered = sorted(results, key=lambda r: r.axis)
    return {
        "policy": "percentile" if ordered[0].axis_name == "percentile" else ordered[0].policy,
        "x_name": ordered[0].axis_name,
        "x": [r.axis for r in ordered],
        "accuracy": [r.accuracy for r in ordered],
        "recall": [r.recall for r in ordered],
    }


def update_plotdata(path: str | Path, key: str, results: list[SweepResult], cfg: RunConfig) -> None:
    """Merge one series into plotdata.json, keeping series written by other sweeps."""
    path = Path(path)
    doc = json.loads(path.read_text()) if path.exists() else {"series": {}}
    doc["series"][key] = {**plot_series(results), "seed": cfg.seed, "config_digest": cfg.digest()}
    write_text_atomic(path, json.dumps(doc, indent=1, sort_keys=True) + "\n")
