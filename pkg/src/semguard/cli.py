"""Command-line driver: ``semguard <command> [flags]``.

Settings come from built-in defaults, then ``--config FILE`` (JSON object
with RunConfig field names), then flags. Exit codes: 0 ok, 1 configuration
error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from semguard import evaluation
from semguard.autoencoder import load_checkpoint, save_checkpoint, train
from semguard.container import write_text_atomic
from semguard.detector import Verdicts, detect, load_stats, save_stats, semantic_vectors, threshold_from_scores
from semguard.errors import ConfigError, DataError, SemguardError
from semguard.pipeline import (
    RunConfig,
    load_training_data,
    make_channel,
    prepare_phase_one,
    resolve,
    split_for,
)
from semguard.poisoning import (
    build_training_set,
    read_manifest,
    tagged_set_from_manifest,
    write_manifest,
)

logger = logging.getLogger("semguard")

DEFAULT_RATIOS = "5,10,20,30,40,50"
DEFAULT_PERCENTILES = ",".join(str(p) for p in range(90, 101))


def _ratio(text: str) -> float:
    # "10" and "0.1" both mean ten percent
    value = float(text)
    return value / 100.0 if value >= 1.0 else value


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad number list {text!r}") from exc


def _anchor(text: str) -> tuple[int, int]:
    r, c = text.split(",")
    return int(r), int(c)


def _common_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    g = p.add_argument_group("run")
    g.add_argument("--config", help="JSON file of RunConfig settings")
    g.add_argument("--seed", type=int)
    g.add_argument("--out-dir", dest="out_dir")
    g.add_argument("--out")
    g.add_argument("-v", "--verbose", action="store_true")

    g = p.add_argument_group("data")
    g.add_argument("--train-images", dest="train_images")
    g.add_argument("--train-labels", dest="train_labels")
    g.add_argument("--baseline-size", dest="baseline_size", type=int)

    g = p.add_argument_group("model")
    g.add_argument("--sigma", type=float)
    g.add_argument("--latent", type=int)
    g.add_argument("--hidden", type=int)
    g.add_argument("--epochs", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--batch", type=int)
    g.add_argument("--model", help="model checkpoint to load")

    g = p.add_argument_group("poisoning")
    g.add_argument("--poison-ratio", dest="poison_ratio", type=_ratio)
    g.add_argument("--source-label", dest="source_label", type=int)
    g.add_argument("--target-label", dest="target_label", type=int)
    g.add_argument("--wm-size", dest="wm_size", type=int)
    g.add_argument("--wm-anchor", dest="wm_anchor", type=_anchor, help="ROW,COL of the patch corner")
    g.add_argument("--wm-intensity", dest="wm_intensity", type=float)
    g.add_argument("--training-size", dest="training_size", type=int, help="|D_t|")
    g.add_argument("--manifest")

    g = p.add_argument_group("channel")
    g.add_argument("--channel", choices=["identity", "awgn"])
    g.add_argument("--noise-std", dest="noise_std", type=float)

    g = p.add_argument_group("detector")
    g.add_argument("--ridge", type=float)
    g.add_argument("--policy", choices=["max", "mean", "percentile"])
    g.add_argument("--alpha", type=float)
    g.add_argument("--percentile", type=float)
    g.add_argument("--path", choices=["direct", "reencode"])
    g.add_argument("--baseline-stats", dest="baseline_stats")
    g.add_argument("--verdicts")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(prog="semguard", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train the clean encoder on the baseline split")
    sub.add_parser("poison", parents=[common], help="build D_t and write its manifest")
    sub.add_parser("baseline", parents=[common], help="fit baseline mean/covariance")
    sub.add_parser("detect", parents=[common], help="score D_t and write verdicts")
    sub.add_parser("evaluate", parents=[common], help="score verdicts against the manifest")
    s = sub.add_parser("sweep-ratio", parents=[common], help="detection across poisoning ratios")
    s.add_argument("--ratios", default=DEFAULT_RATIOS, help="comma list, percent or fraction")
    s = sub.add_parser("sweep-percentile", parents=[common], help="detection across percentile thresholds")
    s.add_argument("--percentiles", default=DEFAULT_PERCENTILES)
    return parser


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    values: dict = {}
    if getattr(ns, "config", None):
        try:
            values.update(json.loads(Path(ns.config).read_text()))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {ns.config}: {exc}") from exc
    skip = {"command", "config", "verbose", "ratios", "percentiles"}
    values.update({k: v for k, v in vars(ns).items() if k not in skip})
    return RunConfig.from_mapping(values)


def _stamp(cfg: RunConfig) -> dict:
    return {"seed": cfg.seed, "config_digest": cfg.digest()}


def _require(value, flag: str):
    if not value:
        raise ConfigError(f"{flag} is required for this command")
    return value


# -- commands ---------------------------------------------------------------


def cmd_train(cfg: RunConfig, ns) -> None:
    sp = split_for(cfg, load_training_data(cfg))
    params, history = train(sp.baseline.pixels, sp.baseline.labels, cfg.train_config())
    out = resolve(cfg, cfg.out, "model.ckpt")
    save_checkpoint(out, params, _stamp(cfg))
    write_text_atomic(out.with_suffix(".log.json"), json.dumps({**_stamp(cfg), "history": history}, indent=1) + "\n")
    logger.info("final loss %.5f -> %s", history[-1]["total"], out)


def cmd_poison(cfg: RunConfig, ns) -> None:
    sp = split_for(cfg, load_training_data(cfg))
    pcfg = cfg.poison_config()
    tagged = build_training_set(sp.pool, pcfg)
    out = resolve(cfg, cfg.out, "manifest.json")
    write_manifest(out, tagged, pcfg, sp.pool_index, _stamp(cfg))
    logger.info("%d samples, %d poisoned -> %s", len(tagged), int(tagged.poisoned.sum()), out)


def cmd_baseline(cfg: RunConfig, ns) -> None:
    params = load_checkpoint(_require(cfg.model, "--model"))
    phase = prepare_phase_one(cfg, load_training_data(cfg), params)
    out = resolve(cfg, cfg.out, "stats.bin")
    save_stats(out, phase.stats, phase.baseline_scores, {**_stamp(cfg), "path": cfg.path})


def cmd_detect(cfg: RunConfig, ns) -> None:
    params = load_checkpoint(_require(cfg.model, "--model"))
    stats, baseline_scores, _ = load_stats(_require(cfg.baseline_stats, "--baseline-stats"))
    if baseline_scores is None:
        raise DataError("stats file carries no baseline scores; rebuild it with `semguard baseline`")
    doc = read_manifest(_require(cfg.manifest, "--manifest"))
    tagged = tagged_set_from_manifest(doc, load_training_data(cfg))
    threshold = threshold_from_scores(baseline_scores, cfg.threshold_policy())
    verdicts = detect(stats, threshold, semantic_vectors(params, tagged.pixels, cfg.path, make_channel(cfg)))
    out = resolve(cfg, cfg.out, "verdicts.json")
    body = {
        **_stamp(cfg),
        "policy": threshold.policy.describe(),
        "threshold": threshold.value,
        "path": cfg.path,
        "verdicts": verdicts.to_records(),
    }
    write_text_atomic(out, json.dumps(body, indent=1) + "\n")
    logger.info("%d of %d flagged (T=%.4f) -> %s", int(verdicts.flags.sum()), len(verdicts), threshold.value, out)


def read_verdicts(path: str | Path) -> Verdicts:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read verdicts {path}: {exc}") from exc
    recs = sorted(doc["verdicts"], key=lambda r: r["index"])
    return Verdicts(
        np.array([r["score"] for r in recs]), np.array([r["is_poisoned"] for r in recs], dtype=bool), doc["threshold"]
    )


def cmd_evaluate(cfg: RunConfig, ns) -> None:
    verdicts = read_verdicts(_require(cfg.verdicts, "--verdicts"))
    doc = read_manifest(_require(cfg.manifest, "--manifest"))
    truth = np.array([s["poisoned"] for s in sorted(doc["samples"], key=lambda s: s["index"])], dtype=bool)
    counts = evaluation.score(verdicts.flags, truth)
    out = resolve(cfg, cfg.out, "metrics.json")
    body = {**_stamp(cfg), "accuracy": counts.accuracy, "recall": counts.recall,
            "TP": counts.tp, "FP": counts.fp, "FN": counts.fn, "TN": counts.tn}
    write_text_atomic(out, json.dumps(body, indent=1) + "\n")
    print(f"accuracy {counts.accuracy:.4f} recall {counts.recall:.4f} "
          f"(TP {counts.tp} FP {counts.fp} FN {counts.fn} TN {counts.tn})")


def _phase_one(cfg: RunConfig):
    dataset = load_training_data(cfg)
    params = load_checkpoint(cfg.model) if cfg.model else None
    return prepare_phase_one(cfg, dataset, params)


def _write_sweep(cfg: RunConfig, results, stem: str, series_key: str) -> None:
    csv_path = resolve(cfg, cfg.out, f"{stem}.csv")
    evaluation.emit_report(results, csv_path, "csv")
    evaluation.emit_report(results, csv_path.with_suffix(".json"), "json")
    evaluation.update_plotdata(csv_path.with_name("plotdata.json"), series_key, results, cfg)
    print(evaluation.render_csv(results), end="")


def cmd_sweep_ratio(cfg: RunConfig, ns) -> None:
    ratios = [_ratio(str(r)) for r in _float_list(ns.ratios)]
    policy = cfg.threshold_policy()
    phase = _phase_one(cfg)
    results = evaluation.sweep_poison_ratio(phase, cfg, ratios, policy)
    _write_sweep(cfg, results, "sweep_ratio", f"ratio:{policy.describe()}")


def cmd_sweep_percentile(cfg: RunConfig, ns) -> None:
    percentiles = _float_list(ns.percentiles)
    phase = _phase_one(cfg)
    results = evaluation.sweep_percentile(phase, cfg, percentiles, cfg.poison_ratio)
    _write_sweep(cfg, results, "sweep_percentile", f"percentile:ratio={cfg.poison_ratio:g}")


COMMANDS = {
    "train": cmd_train,
    "poison": cmd_poison,
    "baseline": cmd_baseline,
    "detect": cmd_detect,
    "evaluate": cmd_evaluate,
    "sweep-ratio": cmd_sweep_ratio,
    "sweep-percentile": cmd_sweep_percentile,
}


def main(argv: list[str] | None = None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(ns, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = config_from_args(ns)
        COMMANDS[ns.command](cfg, ns)
    except SemguardError as exc:
        print(f"semguard: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
