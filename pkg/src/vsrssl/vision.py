"""Clip augmentation: fixed-box ROI, random/centre crops, flips, mixup, normalisation.

Clips are numpy arrays shaped (T, H, W). All random decisions are made once
per clip, never per frame.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .substrate import RngStream

VAR_FLOOR = 1e-8


@dataclass(frozen=True)
class AugmentConfig:
    roi: int = 32
    crop: int = 28
    flip_p: float = 0.5
    mixup_alpha: float = 0.4
    mixup_mode: str = "beta"  # "beta": lambda ~ Beta(a, a); "fixed": lambda = a

    def __post_init__(self):
        if self.mixup_mode not in ("beta", "fixed"):
            raise ValueError(f"mixup_mode must be 'beta' or 'fixed', got {self.mixup_mode!r}")
        if self.crop > self.roi:
            raise ValueError("crop must not exceed the ROI size")


@dataclass
class ClipBatch:
    clips: np.ndarray  # B x T x H x W
    labels: list  # class ids, or token sequences
    lengths: np.ndarray | None = None
    label_weights: np.ndarray | None = None  # B x V soft labels after mixup

    def __post_init__(self):
        if self.label_weights is not None:
            rows = self.label_weights.sum(axis=1)
            if not np.allclose(rows, 1.0, atol=1e-6):
                raise ValueError("soft-label rows must sum to 1")

    @property
    def is_sentence(self) -> bool:
        return self.lengths is not None


def horizontal_flip(clip: np.ndarray, p: float, rng: RngStream) -> np.ndarray:
    """Mirror every frame left-right with probability ``p`` (one draw per clip)."""
    if bool(rng.bernoulli(p)):
        return clip[..., ::-1].copy()
    return clip


def _check_crop(clip: np.ndarray, out: tuple[int, int]) -> tuple[int, int, int, int]:
    h, w = out
    H, W = clip.shape[-2:]
    if h > H or w > W:
        raise ValueError(f"crop {out} larger than input {(H, W)}")
    return h, w, H, W


def center_crop(clip: np.ndarray, out: tuple[int, int]) -> np.ndarray:
    h, w, H, W = _check_crop(clip, out)
    r, c = (H - h) // 2, (W - w) // 2
    return clip[..., r:r + h, c:c + w]


def random_crop(clip: np.ndarray, out: tuple[int, int], rng: RngStream) -> np.ndarray:
    h, w, H, W = _check_crop(clip, out)
    r, c = (int(v) for v in rng.integers(0, [H - h + 1, W - w + 1]))
    return clip[..., r:r + h, c:c + w]


def normalize_clip(clip: np.ndarray) -> np.ndarray:
    x = clip.astype(np.float64)
    var = x.var()
    if var <= VAR_FLOOR:
        return np.zeros_like(clip, dtype=np.float32)
    return ((x - x.mean()) / np.sqrt(var)).astype(np.float32)


def train_transform(clip: np.ndarray, rng: RngStream, cfg: AugmentConfig = AugmentConfig()) -> np.ndarray:
    x = center_crop(clip, (cfg.roi, cfg.roi))
    x = random_crop(x, (cfg.crop, cfg.crop), rng)
    x = horizontal_flip(x, cfg.flip_p, rng)
    return normalize_clip(x)


def test_transform(clip: np.ndarray, cfg: AugmentConfig = AugmentConfig()) -> np.ndarray:
    return normalize_clip(center_crop(clip, (cfg.crop, cfg.crop)))


def one_hot(labels, n_classes: int) -> np.ndarray:
    out = np.zeros((len(labels), n_classes))
    out[np.arange(len(labels)), np.asarray(labels)] = 1.0
    return out


def mixup(batch: ClipBatch, n_classes: int, rng: RngStream, alpha: float = 0.4,
          mode: str = "beta", lam: float | None = None) -> ClipBatch:
    """Convex mix of each clip with a partner from a seeded permutation.

    One lambda per batch; ``lam`` overrides the draw (used in tests).
    """
    if batch.is_sentence:
        raise ValueError("mixup applies to word-level batches only")
    if lam is None:
        lam = rng.beta(alpha, alpha) if mode == "beta" else float(alpha)
    perm = rng.permutation(len(batch.labels))
    clips = lam * batch.clips + (1.0 - lam) * batch.clips[perm]
    y = one_hot(batch.labels, n_classes)
    weights = lam * y + (1.0 - lam) * y[perm]
    return ClipBatch(clips.astype(np.float32), list(batch.labels), None, weights)
