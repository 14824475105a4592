"""MFCC-style acoustic targets and their pooling to the video frame rate."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dct

from .substrate import ParameterStore

LOG_FLOOR = 1e-10
VIDEO_FPS = 25
FEATURE_FPS = 100


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        self.samples = np.asarray(self.samples, dtype=np.float32)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class AcousticFeatureSeq:
    values: np.ndarray  # T x D
    frame_rate: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise ValueError(f"feature matrix must be T x D with T >= 1, got {self.values.shape}")
        if self.frame_rate not in (FEATURE_FPS, VIDEO_FPS):
            raise ValueError(f"frame_rate must be 100 or 25, got {self.frame_rate}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite feature values")

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def D(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class MelConfig:
    sample_rate: int = 16000
    n_fft: int = 400
    hop: int = 160
    n_mels: int = 40
    n_mfcc: int = 20
    fmin: float = 0.0
    fmax: float = 8000.0

    def __post_init__(self):
        if not 0 <= self.fmin < self.fmax <= self.sample_rate / 2:
            raise ValueError(f"need 0 <= fmin < fmax <= {self.sample_rate / 2}")
        if self.n_mfcc > self.n_mels:
            raise ValueError("n_mfcc must not exceed n_mels")
        if not 0 < self.hop <= self.n_fft:
            raise ValueError("need 0 < hop <= n_fft")


def frame_signal(wave: Waveform | np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    """Hann-windowed frames, shape (1 + (len - n_fft) // hop, n_fft)."""
    x = wave.samples if isinstance(wave, Waveform) else np.asarray(wave, dtype=np.float32)
    if len(x) < n_fft:
        raise ValueError(f"signal of {len(x)} samples is shorter than one frame ({n_fft})")
    n = 1 + (len(x) - n_fft) // hop
    idx = np.arange(n_fft)[None, :] + hop * np.arange(n)[:, None]
    window = np.hanning(n_fft + 1)[:-1]  # periodic Hann
    return x[idx].astype(np.float64) * window


def power_spectrum(frames: np.ndarray) -> np.ndarray:
    """|DFT|^2 over the non-negative frequency bins (n_fft // 2 + 1)."""
    return np.abs(np.fft.rfft(frames, axis=-1)) ** 2


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(cfg: MelConfig) -> np.ndarray:
    """n_mels + 2 frequencies (Hz); band k spans edges[k]..edges[k+2], peaks at edges[k+1]."""
    return mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2))


def mel_filterbank(cfg: MelConfig) -> np.ndarray:
    """Triangular filters, each scaled to unit area over frequency; (n_mels, n_fft//2+1)."""
    edges = mel_band_edges(cfg)
    freqs = np.arange(cfg.n_fft // 2 + 1) * cfg.sample_rate / cfg.n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs - lo) / (mid - lo)
    down = (hi - freqs) / (hi - mid)
    tri = np.maximum(0.0, np.minimum(up, down))
    return tri * (2.0 / (hi - lo))


def mel_energies(wave: Waveform, cfg: MelConfig) -> np.ndarray:
    frames = frame_signal(wave, cfg.n_fft, cfg.hop)
    return power_spectrum(frames) @ mel_filterbank(cfg).T


def mfcc_features(wave: Waveform, cfg: MelConfig | None = None) -> AcousticFeatureSeq:
    cfg = cfg or MelConfig(sample_rate=wave.sample_rate)
    if cfg.hop * FEATURE_FPS != wave.sample_rate:
        raise ValueError(f"hop must be sample_rate/100 = {wave.sample_rate / FEATURE_FPS}")
    logmel = np.log(mel_energies(wave, cfg) + LOG_FLOOR)
    coeffs = dct(logmel, type=2, norm="ortho", axis=-1)[:, : cfg.n_mfcc]
    return AcousticFeatureSeq(coeffs, FEATURE_FPS)


def pool_to_video_rate(feats: AcousticFeatureSeq) -> AcousticFeatureSeq:
    """Average non-overlapping groups of 4 frames (100 fps -> 25 fps), dropping the remainder."""
    if feats.frame_rate != FEATURE_FPS:
        raise ValueError(f"expected 100 fps input, got {feats.frame_rate}")
    ratio = FEATURE_FPS // VIDEO_FPS
    t_out = feats.T // ratio
    if t_out < 1:
        raise ValueError(f"need at least {ratio} frames to pool, got {feats.T}")
    v = feats.values[: t_out * ratio].astype(np.float64)
    return AcousticFeatureSeq(v.reshape(t_out, ratio, feats.D).mean(axis=1), VIDEO_FPS)


def video_rate_targets(wave: Waveform, cfg: MelConfig | None = None) -> np.ndarray:
    return pool_to_video_rate(mfcc_features(wave, cfg)).values


def dump_features(feats: dict[str, AcousticFeatureSeq], path: str | Path) -> None:
    """Write one container entry per utterance plus a ``.txt`` sidecar (id T D frame_rate)."""
    path = Path(path)
    store = ParameterStore((uid, f.values) for uid, f in feats.items())
    store.save(path)
    lines = [f"{uid}\t{f.T}\t{f.D}\t{f.frame_rate}" for uid, f in feats.items()]
    path.with_suffix(path.suffix + ".txt").write_text("\n".join(lines) + "\n")


def load_features(path: str | Path) -> dict[str, AcousticFeatureSeq]:
    path = Path(path)
    store = ParameterStore.load(path)
    rates = {}
    for line in path.with_suffix(path.suffix + ".txt").read_text().splitlines():
        uid, _, _, fr = line.split("\t")
        rates[uid] = int(fr)
    return {uid: AcousticFeatureSeq(store[uid].numpy(), rates[uid]) for uid in store}
