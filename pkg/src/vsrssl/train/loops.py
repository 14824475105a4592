"""Training loops for the pretext task and the word/sentence downstream tasks."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn

from ..corpus import WINDOW_FRAMES, Corpus, ManifestEntry, TooShortError, Utterance, label_fraction_subset, random_one_second_window
from ..dsp import MelConfig, video_rate_targets
from ..models.heads import ProjectionHeadConfig, MSTCNConfig
from ..models.zoo import FeatureStandardizer, ModelConfig, PretextModel, SentenceModel, WordModel, load_encoder
from ..substrate import ParameterStore, RngStream, module_digest
from ..vision import AugmentConfig, ClipBatch, mixup, test_transform, train_transform
from .decode import beam_search_decode
from .losses import joint_loss, l1_pretext_loss, soft_cross_entropy
from .metrics import MetricRecord, corpus_wer, top1_accuracy
from .optim import Optimizer, OptimState, noam_lr, noam_scale_for_peak

log = logging.getLogger(__name__)

TASKS = ("pretext", "word", "sentence")
REGIMES = ("supervised", "frozen", "finetuned")


@dataclass
class TrainPlan:
    task: str = "word"
    regime: str = "supervised"
    epochs: int = 10
    batch_size: int = 32
    min_steps: int = 0  # extra epochs are added until at least this many steps run
    lr: float = 3e-4  # constant rate, or the peak of the noam schedule
    schedule: str = "constant"  # constant | noam
    warmup: int = 25000
    optimizer: str = "adamw"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    mixup: bool = True
    mixup_alpha: float = 0.4
    mixup_mode: str = "beta"
    flip_p: float = 0.5
    tap: str | None = None
    checkpoint: str | None = None
    fraction: float = 1.0
    curriculum: float | None = None  # frame threshold for stage 1 (utterances strictly shorter)
    curriculum_quantile: float | None = None  # threshold from a length quantile when curriculum is unset
    curriculum_epochs: int | None = None
    max_frames: int | None = None
    ctc_weight: float = 0.3
    label_smoothing: float = 0.1
    decode_ctc_weight: float = 0.1
    beam: int = 20
    lm_weight: float = 0.0
    target_standardize: bool = True
    val_fraction: float = 0.1
    seed: int = 0
    run_id: str | None = None

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.schedule not in ("constant", "noam"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.optimizer not in ("adam", "adamw"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        needs_source = self.regime == "finetuned" or (self.regime == "frozen" and self.task != "pretext")
        if needs_source and not self.checkpoint:
            raise ValueError(f"regime {self.regime!r} needs a source checkpoint (key: checkpoint)")
        if not 0 < self.fraction <= 1:
            raise ValueError("fraction must lie in (0, 1]")

    @property
    def name(self) -> str:
        return self.run_id or f"{self.task}-{self.regime}-f{self.fraction:g}-s{self.seed}"


def plan_defaults(task: str, scale: str = "desk", **overrides) -> TrainPlan:
    """Optimiser/schedule settings per task. "paper" keeps the published values;
    "desk" shrinks warm-up, epochs and batch sizes to the synthetic corpus."""
    adam = dict(optimizer="adam", beta1=0.9, beta2=0.98, eps=1e-9, weight_decay=0.0, schedule="noam")
    adamw = dict(optimizer="adamw", beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.01, schedule="constant")
    paper = {
        "pretext": dict(adam, batch_size=32, warmup=25000, lr=1e-3, epochs=50, mixup=False),
        "word": dict(adamw, batch_size=32, lr=3e-4, epochs=80, mixup=True),
        "sentence": dict(adam, batch_size=8, warmup=25000, lr=4e-4, epochs=50, mixup=False, max_frames=600),
    }
    desk = {
        "pretext": dict(adam, batch_size=32, warmup=60, lr=3e-3, epochs=25, mixup=False),
        "word": dict(adamw, batch_size=32, lr=1e-3, epochs=15, mixup=True, min_steps=150),
        "sentence": dict(adam, batch_size=16, warmup=60, lr=3e-3, epochs=15, mixup=False, max_frames=64,
                         beam=5, curriculum_quantile=0.6),
    }
    table = {"paper": paper, "desk": desk}[scale]
    return TrainPlan(task=task, **{**table[task], **overrides})


@dataclass
class RunResult:
    model: nn.Module
    records: list[MetricRecord]
    metrics: dict[str, float]
    info: dict = field(default_factory=dict)

    @property
    def store(self) -> ParameterStore:
        return ParameterStore.from_module(self.model)


def _optim_state(plan: TrainPlan) -> OptimState:
    return OptimState(plan.optimizer, plan.beta1, plan.beta2, plan.eps, plan.weight_decay)


def _lr(plan: TrainPlan, step: int, d_model: int) -> float:
    if plan.schedule == "noam":
        return noam_lr(step, plan.warmup, d_model, noam_scale_for_peak(plan.lr, plan.warmup, d_model))
    return plan.lr


def _n_epochs(plan: TrainPlan, steps_per_epoch: int, epochs: int | None = None) -> int:
    epochs = plan.epochs if epochs is None else epochs
    if plan.min_steps:
        epochs = max(epochs, math.ceil(plan.min_steps / steps_per_epoch))
    return epochs


def _seed_torch(rng: RngStream) -> None:
    torch.manual_seed(rng.torch_seed())


def _batches(n: int, size: int, rng: RngStream) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i:i + size] for i in range(0, n, size)]


def _augment(plan: TrainPlan) -> AugmentConfig:
    return AugmentConfig(flip_p=plan.flip_p, mixup_alpha=plan.mixup_alpha, mixup_mode=plan.mixup_mode)


# --------------------------------------------------------------------------
# Pretext
# --------------------------------------------------------------------------


@dataclass
class TargetStats:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std


def pretext_targets(utts: Sequence[Utterance], mel: MelConfig | None = None) -> dict[str, np.ndarray]:
    """25 fps pooled MFCCs over each whole utterance; window starting at video frame s
    uses rows s .. s+23 (the 1 s window yields 98 MFCC frames, i.e. 24 pooled rows)."""
    return {u.id: video_rate_targets(u.wave, mel) for u in utts}


def target_rows() -> int:
    return (1 + (WINDOW_FRAMES * 640 - 400) // 160) // 4


def run_pretext(plan: TrainPlan, corpus: Corpus, model_cfg: ModelConfig, mel: MelConfig | None = None,
                source: ParameterStore | None = None) -> RunResult:
    """L1 regression of pooled MFCC targets from random 1 s video windows.

    ``plan.regime == "frozen"`` trains only the head on a randomly initialised
    encoder (the head-only baseline); "finetuned" starts from ``source``.
    """
    plan.validate()
    mel = mel or MelConfig()
    rng = RngStream(plan.seed).child("pretext")
    entries = corpus.pretext.split("pretrain")
    utts = [u for u in corpus.load_all(entries) if u.T_v >= WINDOW_FRAMES]
    if not utts:
        raise TooShortError("every pretext utterance is shorter than 1 s")
    order = rng.child("val-split").permutation(len(utts))
    n_val = max(1, round(plan.val_fraction * len(utts))) if len(utts) > 1 else 0
    val = [utts[i] for i in order[:n_val]]
    train = [utts[i] for i in order[n_val:]] or val
    targets = pretext_targets(utts, mel)
    rows = np.concatenate([targets[u.id] for u in train])
    stats = TargetStats(rows.mean(axis=0), np.maximum(rows.std(axis=0), 1e-8)) if plan.target_standardize \
        else TargetStats(np.zeros(rows.shape[1]), np.ones(rows.shape[1]))
    n_rows = target_rows()

    cfg = replace(model_cfg, head=replace(model_cfg.head, out_dim=mel.n_mfcc))
    _seed_torch(rng.child("init"))
    model = PretextModel(cfg)
    if source is not None:
        load_encoder(model, source)
    if plan.regime == "frozen":
        for p in model.encoder.parameters():
            p.requires_grad_(False)
    opt = Optimizer(model, _optim_state(plan))
    aug = _augment(plan)
    _seed_torch(rng.child("torch"))

    def window_batch(batch_utts, stream: RngStream, train_mode: bool):
        clips, tg = [], []
        for u in batch_utts:
            w = random_one_second_window(u, stream.child(("win", u.id)))
            x = train_transform(w.frames, stream.child(("aug", u.id)), aug) if train_mode else test_transform(w.frames, aug)
            clips.append(x)
            tg.append(stats.apply(targets[u.id][w.start:w.start + n_rows]))
        return torch.from_numpy(np.stack(clips)), torch.from_numpy(np.stack(tg).astype(np.float32))

    val_x, val_y = window_batch(val, rng.child("val-windows"), False) if val else (None, None)

    def val_loss() -> float:
        model.eval()
        with torch.no_grad():
            losses = []
            for i in range(0, len(val_x), plan.batch_size):
                pred = model(val_x[i:i + plan.batch_size])[:, :n_rows]
                losses.append(float(l1_pretext_loss(pred, val_y[i:i + plan.batch_size])) * len(pred))
        model.train()
        return sum(losses) / len(val_x)

    steps_per_epoch = math.ceil(len(train) / plan.batch_size)
    epochs = _n_epochs(plan, steps_per_epoch)
    records, curve = [], []
    best = (float("inf"), -1, None)
    step = 0
    model.train()
    for epoch in range(epochs):
        for b, idx in enumerate(_batches(len(train), plan.batch_size, rng.child(("order", epoch)))):
            x, y = window_batch([train[i] for i in idx], rng.child(("batch", epoch, b)), True)
            loss = l1_pretext_loss(model(x)[:, :n_rows], y)
            opt.zero_grad()
            loss.backward()
            step += 1
            opt.step(_lr(plan, step, cfg.conformer.d_model))
            curve.append(loss.item())
        v = val_loss()
        records.append(MetricRecord(plan.name, "pretext", plan.regime, plan.fraction, plan.seed, epoch, "l1_loss", v))
        log.info("pretext %s epoch %d val_l1 %.4f", plan.name, epoch, v)
        if v < best[0]:
            best = (v, epoch, ParameterStore.from_module(model))
    best[2].load_into(model)
    return RunResult(model, records, {"val_l1": best[0]},
                     {"best_epoch": best[1], "train_curve": curve, "steps": step, "model_cfg": cfg,
                      "target_mean": stats.mean.tolist(), "target_std": stats.std.tolist()})


def pretext_val_loss(model: PretextModel, corpus: Corpus, plan: TrainPlan, mel: MelConfig | None = None) -> float:
    """Validation L1 of ``model`` on the split carved by ``run_pretext`` for ``plan.seed``."""
    mel = mel or MelConfig()
    rng = RngStream(plan.seed).child("pretext")
    utts = [u for u in corpus.load_all(corpus.pretext.split("pretrain")) if u.T_v >= WINDOW_FRAMES]
    order = rng.child("val-split").permutation(len(utts))
    n_val = max(1, round(plan.val_fraction * len(utts)))
    val = [utts[i] for i in order[:n_val]]
    train = [utts[i] for i in order[n_val:]]
    targets = pretext_targets(utts, mel)
    rows = np.concatenate([targets[u.id] for u in train])
    stats = TargetStats(rows.mean(axis=0), np.maximum(rows.std(axis=0), 1e-8)) if plan.target_standardize \
        else TargetStats(np.zeros(rows.shape[1]), np.ones(rows.shape[1]))
    n_rows = target_rows()
    stream = rng.child("val-windows")
    total = 0.0
    model.eval()
    with torch.no_grad():
        for u in val:
            w = random_one_second_window(u, stream.child(("win", u.id)))
            x = torch.from_numpy(test_transform(w.frames)[None])
            y = torch.from_numpy(stats.apply(targets[u.id][w.start:w.start + n_rows])[None].astype(np.float32))
            total += float(l1_pretext_loss(model(x)[:, :n_rows], y))
    return total / len(val)


# --------------------------------------------------------------------------
# Word level
# --------------------------------------------------------------------------


class RandomProjectionEncoder(nn.Module):
    """Fixed random linear map from each (normalised) frame's pixels to ``dim`` features."""

    def __init__(self, pixels: int, dim: int, seed: int):
        super().__init__()
        w = RngStream(seed).child("random-projection").normal01((pixels, dim)) / math.sqrt(pixels)
        self.register_buffer("weight", torch.from_numpy(w.astype(np.float32)))
        self.dim = dim

    tap_names = ("random-projection",)
    last_tap = "random-projection"

    def check_tap(self, tap):
        pass

    def tap_dim(self, tap):
        return self.dim

    def forward(self, clips, lengths=None, upto=None, taps=None):
        B, T = clips.shape[:2]
        return clips.reshape(B, T, -1) @ self.weight


def _word_model(plan: TrainPlan, cfg: ModelConfig, encoder: nn.Module | None) -> WordModel:
    frozen = plan.regime == "frozen"
    model = WordModel(cfg, plan.tap, frozen=False)
    if encoder is not None:
        model.encoder = encoder
        model.tap = encoder.last_tap
        model.norm = FeatureStandardizer(encoder.tap_dim(model.tap))
        model.mstcn = type(model.mstcn)(encoder.tap_dim(model.tap), cfg.mstcn)
    if frozen:
        model.freeze_encoder()
    return model


def fit_standardizer(model: WordModel, utts: Sequence[Utterance], batch_size: int = 64) -> None:
    """Fit ``model.norm`` to frozen features of the (test-transformed) training clips."""
    model.eval()
    feats = []
    with torch.no_grad():
        for i in range(0, len(utts), batch_size):
            x = torch.from_numpy(np.stack([test_transform(u.frames) for u in utts[i:i + batch_size]]))
            feats.append(model.encoder_features(x))
    model.norm.fit(torch.cat(feats))
    model.train()


def evaluate_word(model: WordModel, utts: Sequence[Utterance], batch_size: int = 64) -> tuple[float, np.ndarray]:
    model.eval()
    logits = []
    with torch.no_grad():
        for i in range(0, len(utts), batch_size):
            x = torch.from_numpy(np.stack([test_transform(u.frames) for u in utts[i:i + batch_size]]))
            logits.append(model(x).numpy())
    logits = np.concatenate(logits)
    return top1_accuracy(logits, [u.word_label for u in utts]), logits


def run_word_downstream(plan: TrainPlan, corpus: Corpus, model_cfg: ModelConfig,
                        source: ParameterStore | None = None, encoder: nn.Module | None = None) -> RunResult:
    """Train a word classifier under one regime and report test top-1 accuracy.

    ``encoder`` replaces the visual encoder (used for the random-projection
    baseline, always frozen).
    """
    plan.validate()
    if plan.regime in ("frozen", "finetuned") and source is None and encoder is None:
        raise ValueError(f"regime {plan.regime!r} needs source parameters")
    rng = RngStream(plan.seed).child("word")
    manifest = corpus.word if plan.fraction == 1.0 else label_fraction_subset(corpus.word, plan.fraction, plan.seed)
    train = corpus.load_all(manifest.split("train"))
    test = corpus.load_all(manifest.split("test"))
    n_classes = corpus.config.n_words
    cfg = replace(model_cfg, mstcn=replace(model_cfg.mstcn, n_classes=n_classes))

    _seed_torch(rng.child("init"))
    model = _word_model(plan, cfg, encoder)
    if plan.tap is not None and encoder is None:
        model.encoder.check_tap(plan.tap)
    if source is not None and encoder is None and plan.regime != "supervised":
        load_encoder(model, source)
    if plan.regime == "frozen":
        fit_standardizer(model, train)
    enc_digest = module_digest(model.encoder)
    opt = Optimizer(model, _optim_state(plan))
    aug = _augment(plan)
    _seed_torch(rng.child("torch"))

    steps_per_epoch = math.ceil(len(train) / plan.batch_size)
    epochs = _n_epochs(plan, steps_per_epoch)
    records, step = [], 0
    model.train()
    for epoch in range(epochs):
        total, count = 0.0, 0
        for b, idx in enumerate(_batches(len(train), plan.batch_size, rng.child(("order", epoch)))):
            stream = rng.child(("batch", epoch, b))
            clips = np.stack([train_transform(train[i].frames, stream.child(("aug", int(i))), aug) for i in idx])
            batch = ClipBatch(clips, [train[i].word_label for i in idx])
            if plan.mixup:
                batch = mixup(batch, n_classes, stream.child("mixup"), plan.mixup_alpha, plan.mixup_mode)
                weights = torch.from_numpy(batch.label_weights.astype(np.float32))
            else:
                weights = torch.nn.functional.one_hot(torch.tensor(batch.labels), n_classes).float()
            loss = soft_cross_entropy(model(torch.from_numpy(batch.clips)), weights)
            opt.zero_grad()
            loss.backward()
            step += 1
            opt.step(_lr(plan, step, cfg.conformer.d_model))
            total += loss.item() * len(idx)
            count += len(idx)
        records.append(MetricRecord(plan.name, "word", plan.regime, plan.fraction, plan.seed, epoch, "ce_loss",
                                    total / count))
    acc, _ = evaluate_word(model, test)
    records.append(MetricRecord(plan.name, "word", plan.regime, plan.fraction, plan.seed, epochs - 1, "accuracy", acc))
    final_digest = module_digest(model.encoder)
    if plan.regime == "frozen" and final_digest != enc_digest:
        raise RuntimeError("frozen encoder parameters changed during training")
    log.info("word %s accuracy %.4f (%d train clips, %d steps)", plan.name, acc, len(train), step)
    return RunResult(model, records, {"accuracy": acc},
                     {"encoder_digest_before": enc_digest, "encoder_digest_after": final_digest,
                      "n_train": len(train), "steps": step, "model_cfg": cfg})


# --------------------------------------------------------------------------
# Sentence level
# --------------------------------------------------------------------------


def length_filter(entries: Sequence[ManifestEntry], max_frames: int | None = None,
                  below: float | None = None) -> list[ManifestEntry]:
    """Entries with T_v <= max_frames and (if given) T_v < below."""
    out = []
    for e in entries:
        if max_frames is not None and e.T_v > max_frames:
            continue
        if below is not None and not e.T_v < below:
            continue
        out.append(e)
    return out


def curriculum_threshold(plan: TrainPlan, entries: Sequence[ManifestEntry]) -> float | None:
    if plan.curriculum is not None:
        return float(plan.curriculum)
    if plan.curriculum_quantile is not None:
        return float(np.quantile([e.T_v for e in entries], plan.curriculum_quantile))
    return None


def collate_sentences(clips: Sequence[np.ndarray]) -> tuple[torch.Tensor, torch.Tensor]:
    T = max(c.shape[0] for c in clips)
    out = np.zeros((len(clips), T) + clips[0].shape[1:], dtype=np.float32)
    for i, c in enumerate(clips):
        out[i, : c.shape[0]] = c
    return torch.from_numpy(out), torch.tensor([c.shape[0] for c in clips])


def _decoder_io(transcripts: Sequence[Sequence[int]], layout) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    L = max(len(t) for t in transcripts) + 1
    prefix = torch.full((len(transcripts), L), layout.pad, dtype=torch.long)
    target = torch.full((len(transcripts), L), layout.pad, dtype=torch.long)
    for i, t in enumerate(transcripts):
        ids = layout.encode(t)
        prefix[i, : len(ids) + 1] = torch.tensor([layout.sos] + ids)
        target[i, : len(ids) + 1] = torch.tensor(ids + [layout.eos])
    lengths = torch.tensor([len(t) + 1 for t in transcripts])
    return prefix, target, lengths


def evaluate_sentence(model: SentenceModel, utts: Sequence[Utterance], plan: TrainPlan) -> tuple[float, list]:
    hyps = []
    for u in utts:
        clip = torch.from_numpy(test_transform(u.frames))
        hyps.append(beam_search_decode(model, clip, plan.beam, plan.decode_ctc_weight, lm_weight=plan.lm_weight))
    return corpus_wer(hyps, [u.transcript for u in utts]), hyps


def _train_sentence_stage(model: SentenceModel, plan: TrainPlan, train: Sequence[Utterance], epochs: int,
                          rng: RngStream, first_epoch: int, records: list, d_model: int) -> int:
    opt = Optimizer(model, _optim_state(plan))
    aug = _augment(plan)
    layout = model.layout
    step = 0
    model.train()
    for e in range(epochs):
        epoch = first_epoch + e
        sums = {"ctc_loss": 0.0, "ce_loss": 0.0}
        count = 0
        for b, idx in enumerate(_batches(len(train), plan.batch_size, rng.child(("order", epoch)))):
            stream = rng.child(("batch", epoch, b))
            utts = [train[i] for i in idx]
            x, lengths = collate_sentences([train_transform(u.frames, stream.child(("aug", u.id)), aug) for u in utts])
            prefix, target, plen = _decoder_io([u.transcript for u in utts], layout)
            ctc_lp, dec_logits = model(x, lengths, prefix, plen)
            loss, ctc, ce = joint_loss(ctc_lp, lengths, [layout.encode(u.transcript) for u in utts],
                                       dec_logits, target, plan.ctc_weight, plan.label_smoothing, layout.pad)
            opt.zero_grad()
            loss.backward()
            step += 1
            opt.step(_lr(plan, step, d_model))
            sums["ctc_loss"] += ctc.item() * len(utts)
            sums["ce_loss"] += ce.item() * len(utts)
            count += len(utts)
        for k, v in sums.items():
            records.append(MetricRecord(plan.name, "sentence", plan.regime, plan.fraction, plan.seed, epoch, k, v / count))
        log.info("sentence %s epoch %d ctc %.3f ce %.3f", plan.name, epoch, sums["ctc_loss"] / count, sums["ce_loss"] / count)
    return step


def run_sentence_downstream(plan: TrainPlan, corpus: Corpus, model_cfg: ModelConfig,
                            source: ParameterStore | None = None, evaluate: bool = True) -> RunResult:
    """Hybrid CTC/attention training with optional two-stage curriculum; reports test WER."""
    plan.validate()
    if plan.regime in ("frozen", "finetuned") and source is None:
        raise ValueError(f"regime {plan.regime!r} needs source parameters")
    rng = RngStream(plan.seed).child("sentence")
    manifest = corpus.sentence if plan.fraction == 1.0 else label_fraction_subset(corpus.sentence, plan.fraction, plan.seed)
    train_entries = length_filter(manifest.split("train"), plan.max_frames)
    if not train_entries:
        raise ValueError("no training utterances left after the max_frames filter")
    threshold = curriculum_threshold(plan, train_entries)
    stage1 = length_filter(train_entries, plan.max_frames, threshold) if threshold is not None else None
    if threshold is not None and not stage1:
        raise ValueError(f"curriculum threshold {threshold} excludes every training utterance")

    cfg = replace(model_cfg, n_tokens=len(corpus_token_set(corpus)))
    _seed_torch(rng.child("init"))
    model = SentenceModel(cfg, plan.tap, frozen=plan.regime == "frozen")
    if source is not None and plan.regime != "supervised":
        load_encoder(model, source)
    enc_digest = module_digest(model.encoder)
    _seed_torch(rng.child("torch"))

    records: list[MetricRecord] = []
    epoch0, steps = 0, 0
    if stage1 is not None:
        e1 = plan.curriculum_epochs or plan.epochs
        steps += _train_sentence_stage(model, plan, corpus.load_all(stage1), e1, rng.child("stage1"), 0, records,
                                       cfg.conformer.d_model)
        epoch0 = e1
    train = corpus.load_all(train_entries)
    steps += _train_sentence_stage(model, plan, train, plan.epochs, rng.child("stage2"), epoch0, records,
                                   cfg.conformer.d_model)
    final_epoch = epoch0 + plan.epochs - 1
    metrics, hyps = {}, None
    if evaluate:
        wer, hyps = evaluate_sentence(model, corpus.load_all(manifest.split("test")), plan)
        records.append(MetricRecord(plan.name, "sentence", plan.regime, plan.fraction, plan.seed, final_epoch, "wer", wer))
        metrics["wer"] = wer
        log.info("sentence %s WER %.4f", plan.name, wer)
    final_digest = module_digest(model.encoder)
    if plan.regime == "frozen" and final_digest != enc_digest:
        raise RuntimeError("frozen encoder parameters changed during training")
    return RunResult(model, records, metrics,
                     {"threshold": threshold, "stage1_ids": [e.id for e in stage1] if stage1 else None,
                      "train_ids": [e.id for e in train_entries], "steps": steps, "hypotheses": hyps,
                      "encoder_digest_before": enc_digest, "encoder_digest_after": final_digest, "model_cfg": cfg})


def corpus_token_set(corpus: Corpus) -> list[int]:
    from ..corpus import TOKEN_PHONES
    return list(range(len(TOKEN_PHONES)))
