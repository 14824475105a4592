from __future__ import annotations

import csv
import math
from dataclasses import astuple, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

CSV_HEADER = ("run_id", "task", "regime", "fraction", "seed", "epoch", "metric", "value")
METRICS = ("l1_loss", "accuracy", "wer", "ctc_loss", "ce_loss")


def edit_distance(hyp: Sequence, ref: Sequence) -> int:
    prev = list(range(len(ref) + 1))
    for i, h in enumerate(hyp, 1):
        cur = [i] + [0] * len(ref)
        for j, r in enumerate(ref, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (h != r))
        prev = cur
    return prev[-1]


def word_error_rate(hyp: Sequence, ref: Sequence) -> float:
    if len(ref) == 0:
        raise ValueError("reference must be non-empty")
    return edit_distance(list(hyp), list(ref)) / len(ref)


def corpus_wer(hyps: Iterable[Sequence], refs: Iterable[Sequence]) -> float:
    """Total edits over total reference length."""
    edits = total = 0
    for h, r in zip(hyps, refs):
        if len(r) == 0:
            raise ValueError("reference must be non-empty")
        edits += edit_distance(list(h), list(r))
        total += len(r)
    return edits / total


def top1_accuracy(logits, labels) -> float:
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    return float(np.mean(logits.argmax(axis=-1) == labels))


@dataclass(frozen=True)
class MetricRecord:
    run_id: str
    task: str
    regime: str
    fraction: float
    seed: int
    epoch: int
    metric: str
    value: float

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if not math.isfinite(self.value):
            raise ValueError(f"{self.metric} value must be finite, got {self.value}")


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def write_metrics_csv(path: str | Path, records: Iterable[MetricRecord], append: bool = False) -> None:
    path = Path(path)
    new_file = not (append and path.exists())
    with path.open("a" if append else "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new_file:
            w.writerow(CSV_HEADER)
        for r in records:
            w.writerow([_fmt(v) for v in astuple(r)])


def read_metrics_csv(path: str | Path) -> list[MetricRecord]:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header != CSV_HEADER:
            raise ValueError(f"{path}: header {header} does not match {CSV_HEADER}")
        out = []
        for row in reader:
            run_id, task, regime, fraction, seed, epoch, metric, value = row
            out.append(MetricRecord(run_id, task, regime, float(fraction), int(seed), int(epoch), metric, float(value)))
        return out


def check_unique(records: Sequence[MetricRecord]) -> None:
    seen = set()
    for r in records:
        key = (r.run_id, r.epoch, r.metric)
        if key in seen:
            raise ValueError(f"duplicate metric record {key}")
        seen.add(key)
