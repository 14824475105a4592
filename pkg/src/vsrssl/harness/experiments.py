"""Experiment drivers: corpus builds, single runs, tap study and label-fraction sweep.

Every driver writes under ``cfg.out_dir`` a config snapshot, a lineage file
(input hashes, seeds) and its metrics CSV, so a run can be reconstructed from
its directory alone.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, replace
from pathlib import Path
from typing import Sequence

from ..corpus import Corpus, build_corpus, label_fraction_subset
from ..models.zoo import ModelConfig, SentenceModel, WordModel, load_checkpoint, preset, save_checkpoint
from ..train.loops import (
    RandomProjectionEncoder,
    RunResult,
    TrainPlan,
    evaluate_sentence,
    evaluate_word,
    run_pretext,
    run_sentence_downstream,
    run_word_downstream,
)
from ..train.metrics import MetricRecord, write_metrics_csv
from ..vision import AugmentConfig
from .config import ExperimentConfig

log = logging.getLogger(__name__)


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n")


def snapshot(cfg: ExperimentConfig, run_dir: Path, **lineage) -> None:
    """Config snapshot plus lineage (corpus manifests, checkpoint hashes, seeds)."""
    _write_json(run_dir / "config.json", cfg.to_dict())
    _write_json(run_dir / "lineage.json", lineage)


def corpus_lineage(corpus: Corpus) -> dict:
    return {
        "corpus_root": str(corpus.root) if corpus.root else None,
        "manifests": {name: m.manifest_id for name, m in corpus.manifests.items()},
    }


def ensure_corpus(cfg: ExperimentConfig) -> Corpus:
    """Load the corpus at ``cfg.corpus_root``, generating it first if absent."""
    root = cfg.corpus_root
    if (root / "corpus_config.json").exists():
        corpus = Corpus.load(root)
        if asdict(corpus.config) != asdict(cfg.corpus):
            raise ValueError(f"corpus at {root} was built with a different corpus config")
        return corpus
    return gen_corpus(cfg)


def gen_corpus(cfg: ExperimentConfig) -> Corpus:
    corpus = build_corpus(cfg.corpus)
    corpus.save(cfg.corpus_root)
    # location-free, so two builds with one seed give byte-identical directories
    _write_json(cfg.corpus_root / "lineage.json",
                {"manifests": corpus_lineage(corpus)["manifests"], "seed": cfg.corpus.seed})
    return corpus


def model_config(cfg: ExperimentConfig) -> ModelConfig:
    return preset(cfg.model)


def _source(plan: TrainPlan):
    if plan.regime == "supervised" or not plan.checkpoint:
        return None, None
    store, _, _ = load_checkpoint(plan.checkpoint)
    return store, file_digest(plan.checkpoint)


def pretrain(cfg: ExperimentConfig, run_dir: Path | None = None) -> RunResult:
    run_dir = Path(run_dir or Path(cfg.out_dir) / "pretrain")
    corpus = ensure_corpus(cfg)
    plan = cfg.pretext
    source, source_digest = _source(plan)
    result = run_pretext(plan, corpus, model_config(cfg), cfg.mel, source)
    run_dir.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(run_dir / "metrics.csv", result.records)
    ckpt = run_dir / "pretext.lira"
    save_checkpoint(ckpt, result.model, result.info["model_cfg"], task="pretext", regime=plan.regime,
                    seed=plan.seed, val_l1=result.metrics["val_l1"], best_epoch=result.info["best_epoch"])
    snapshot(cfg, run_dir, **corpus_lineage(corpus), seed=plan.seed, source_checkpoint=source_digest,
             checkpoint=file_digest(ckpt))
    return result


def _save_downstream(cfg, plan: TrainPlan, result: RunResult, run_dir: Path, corpus: Corpus, source_digest,
                     extra: dict | None = None) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(run_dir / "metrics.csv", result.records)
    ckpt = run_dir / "model.lira"
    metric = "accuracy" if plan.task == "word" else "wer"
    meta = {"task": plan.task, "regime": plan.regime, "tap": result.model.tap, "fraction": plan.fraction,
            "seed": plan.seed, "plan": asdict(plan), "corpus_root": str(Path(corpus.root).resolve()), metric: result.metrics.get(metric)}
    save_checkpoint(ckpt, result.model, result.info["model_cfg"], **meta, **(extra or {}))
    snapshot(cfg, run_dir, **corpus_lineage(corpus), seed=plan.seed, source_checkpoint=source_digest,
             checkpoint=file_digest(ckpt), encoder_digest=result.info["encoder_digest_after"])


def train_word(cfg: ExperimentConfig, plan: TrainPlan | None = None, run_dir: Path | None = None) -> RunResult:
    plan = plan or cfg.word
    corpus = ensure_corpus(cfg)
    source, digest = _source(plan)
    result = run_word_downstream(plan, corpus, model_config(cfg), source)
    _save_downstream(cfg, plan, result, Path(run_dir or Path(cfg.out_dir) / "word" / plan.name), corpus, digest)
    return result


def train_sentence(cfg: ExperimentConfig, plan: TrainPlan | None = None, run_dir: Path | None = None) -> RunResult:
    plan = plan or cfg.sentence
    corpus = ensure_corpus(cfg)
    source, digest = _source(plan)
    result = run_sentence_downstream(plan, corpus, model_config(cfg), source)
    _save_downstream(cfg, plan, result, Path(run_dir or Path(cfg.out_dir) / "sentence" / plan.name), corpus, digest,
                     {"threshold": result.info["threshold"]})
    return result


def evaluate(checkpoint: str | Path) -> tuple[str, float]:
    """Recompute the test metric of a saved downstream checkpoint."""
    store, model_cfg, meta = load_checkpoint(checkpoint)
    task = meta.get("task")
    if task not in ("word", "sentence"):
        raise ValueError(f"{checkpoint}: evaluate needs a word or sentence checkpoint, got task {task!r}")
    corpus = Corpus.load(meta["corpus_root"])
    plan = TrainPlan(**{**meta["plan"]})
    manifest = corpus.manifests[task]
    test = corpus.load_all(manifest.split("test"))
    if task == "word":
        if meta["tap"] == RandomProjectionEncoder.last_tap:
            raise ValueError("random-projection baselines are not saved for evaluation")
        model = WordModel(model_cfg, meta["tap"], frozen=plan.regime == "frozen")
        store.load_into(model)
        acc, _ = evaluate_word(model, test)
        return "accuracy", acc
    model = SentenceModel(model_cfg, meta["tap"], frozen=plan.regime == "frozen")
    store.load_into(model)
    wer, _ = evaluate_sentence(model, test, plan)
    return "wer", wer


# --------------------------------------------------------------------------
# Sweeps
# --------------------------------------------------------------------------


def _final(records: Sequence[MetricRecord], metric: str) -> MetricRecord:
    return [r for r in records if r.metric == metric][-1]


def tap_study(cfg: ExperimentConfig, run_dir: Path | None = None) -> tuple[list[MetricRecord], list[MetricRecord]]:
    """Frozen word models on each tap, plus random-projection baselines of matching width.

    Writes ``taps.csv`` (one row per tap and seed; run_id ``tap:<tap>:s<seed>``)
    and ``baseline.csv`` (one row per distinct width and seed).
    """
    run_dir = Path(run_dir or Path(cfg.out_dir) / "tap-study")
    base = replace(cfg.word, regime="frozen", fraction=cfg.tap_fraction)
    if not base.checkpoint:
        raise ValueError("tap study needs a pretext checkpoint (key: word.checkpoint)")
    corpus = ensure_corpus(cfg)
    source, digest = _source(base)
    mcfg = model_config(cfg)
    probe = WordModel(mcfg)
    for tap in cfg.taps:
        probe.encoder.check_tap(tap)
    rows, baseline, training = [], [], []
    widths = sorted({probe.encoder.tap_dim(t) for t in cfg.taps})
    for seed in cfg.seeds:
        for tap in cfg.taps:
            plan = replace(base, tap=tap, seed=seed, run_id=f"tap:{tap}:s{seed}")
            result = run_word_downstream(plan, corpus, mcfg, source)
            rows.append(_final(result.records, "accuracy"))
            training.extend(result.records[:-1])
        for dim in widths:
            plan = replace(base, tap=None, seed=seed, run_id=f"random-projection:d{dim}:s{seed}")
            encoder = RandomProjectionEncoder(AugmentConfig().crop ** 2, dim, seed)
            result = run_word_downstream(plan, corpus, mcfg, encoder=encoder)
            baseline.append(_final(result.records, "accuracy"))
    run_dir.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(run_dir / "taps.csv", rows)
    write_metrics_csv(run_dir / "baseline.csv", baseline)
    write_metrics_csv(run_dir / "training.csv", training)
    snapshot(cfg, run_dir, **corpus_lineage(corpus), seeds=cfg.seeds, source_checkpoint=digest,
             tap_dims={t: probe.encoder.tap_dim(t) for t in cfg.taps})
    return rows, baseline


def tap_summary(rows: Sequence[MetricRecord], baseline: Sequence[MetricRecord], tap_dims: dict[str, int]) -> dict:
    """Per tap: seed-mean accuracy, seed-mean baseline accuracy at the tap's width."""
    out = {}
    for tap, dim in tap_dims.items():
        acc = [r.value for r in rows if r.run_id.split(":")[1] == tap]
        ref = [r.value for r in baseline if r.run_id.split(":")[1] == f"d{dim}"]
        out[tap] = {"accuracy": sum(acc) / len(acc), "baseline": sum(ref) / len(ref), "dim": dim}
    return out


def fraction_sweep(cfg: ExperimentConfig, run_dir: Path | None = None) -> list[MetricRecord]:
    """All regimes x fractions x seeds on nested label subsets; one final-metric row per cell."""
    run_dir = Path(run_dir or Path(cfg.out_dir) / "fraction-sweep")
    task = cfg.sweep_task
    base: TrainPlan = getattr(cfg, task)
    needs_source = [r for r in cfg.regimes if r != "supervised"]
    if needs_source and not base.checkpoint:
        raise ValueError(f"regimes {needs_source} need a pretext checkpoint (key: {task}.checkpoint)")
    corpus = ensure_corpus(cfg)
    source, digest = (None, None)
    if base.checkpoint:
        source, _, _ = load_checkpoint(base.checkpoint)
        digest = file_digest(base.checkpoint)
    runner = run_word_downstream if task == "word" else run_sentence_downstream
    metric = "accuracy" if task == "word" else "wer"
    rows, training, subsets = [], [], {}
    for seed in cfg.seeds:
        for fraction in cfg.fractions:
            m = getattr(corpus, task) if fraction == 1.0 else label_fraction_subset(getattr(corpus, task), fraction, seed)
            subsets[f"{fraction:g}:s{seed}"] = m.manifest_id
            for regime in cfg.regimes:
                plan = replace(base, regime=regime, fraction=fraction, seed=seed,
                               run_id=f"{task}:{regime}:f{fraction:g}:s{seed}")
                result = runner(plan, corpus, model_config(cfg), source if regime != "supervised" else None)
                rows.append(_final(result.records, metric))
                training.extend(r for r in result.records if r.metric != metric)
                log.info("sweep %s %s", plan.run_id, result.metrics)
    run_dir.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(run_dir / "fraction_sweep.csv", rows)
    write_metrics_csv(run_dir / "training.csv", training)
    snapshot(cfg, run_dir, **corpus_lineage(corpus), seeds=cfg.seeds, source_checkpoint=digest, subsets=subsets)
    return rows
