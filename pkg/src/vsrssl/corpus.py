"""Synthetic paired audio-visual corpus.

Every utterance is rendered from one phone sequence: the video shows a mouth
ellipse whose opening and width follow the phones, the audio is a pair of
formant sinusoids per voiced phone. Audio is therefore predictable from the
video by construction.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .dsp import VIDEO_FPS, Waveform
from .substrate import ParameterStore, RngStream

SPLITS = ("pretrain", "train", "val", "test")
WINDOW_FRAMES = VIDEO_FPS  # one second of video
WORD_FRAMES = 29  # 1.16 s at 25 fps


@dataclass(frozen=True)
class PhoneSpec:
    id: int
    f1: float
    f2: float
    aperture: float
    width: float
    voiced: bool

    def validate(self, sample_rate: int = 16000) -> None:
        if not 0 < self.f1 < self.f2 < sample_rate / 2:
            raise ValueError(f"phone {self.id}: need 0 < f1 < f2 < {sample_rate / 2}")
        if not (0 <= self.aperture <= 1 and 0 <= self.width <= 1):
            raise ValueError(f"phone {self.id}: aperture/width must lie in [0, 1]")
        if self.id == 0 and (self.aperture != 0 or self.voiced):
            raise ValueError("phone 0 is silence: aperture 0, unvoiced")


# Vowel-like formants; mouth shapes spread over the (aperture, width) plane.
PHONES: tuple[PhoneSpec, ...] = (
    PhoneSpec(0, 500.0, 1500.0, 0.00, 0.50, False),
    PhoneSpec(1, 730.0, 1090.0, 0.90, 0.60, True),
    PhoneSpec(2, 270.0, 2290.0, 0.20, 0.95, True),
    PhoneSpec(3, 300.0, 870.0, 0.35, 0.30, True),
    PhoneSpec(4, 530.0, 1840.0, 0.55, 0.85, True),
    PhoneSpec(5, 570.0, 840.0, 0.70, 0.35, True),
    PhoneSpec(6, 440.0, 1020.0, 0.45, 0.55, True),
    PhoneSpec(7, 660.0, 1720.0, 0.75, 0.80, True),
    PhoneSpec(8, 3000.0, 5500.0, 0.15, 0.60, False),  # fricative-like, noise only
)
SILENCE = 0


@dataclass(frozen=True)
class SpeakerStyle:
    scale: float
    brightness: float
    formant_shift: float
    dx: float
    dy: float


def speaker_style(style: int) -> SpeakerStyle:
    """Rendering parameters for a style id (fixed, independent of the corpus seed)."""
    u = RngStream(0x5EED).child(("style", int(style))).uniform01(5)
    return SpeakerStyle(
        scale=0.85 + 0.3 * u[0],
        brightness=0.45 + 0.3 * u[1],
        formant_shift=0.9 + 0.2 * u[2],
        dx=-1.5 + 3.0 * u[3],
        dy=-1.5 + 3.0 * u[4],
    )


@dataclass
class Utterance:
    id: str
    frames: np.ndarray  # T_v x H x W, float32 in [0, 1]
    wave: Waveform
    speaker_style: int
    word_label: int | None = None
    transcript: tuple[int, ...] | None = None
    phone_ids: tuple[int, ...] = ()

    @property
    def T_v(self) -> int:
        return self.frames.shape[0]

    @property
    def duration(self) -> float:
        return self.T_v / VIDEO_FPS


def _frame_counts(n_phones: int, dur_per_phone) -> list[int]:
    durs = [dur_per_phone] * n_phones if np.isscalar(dur_per_phone) else list(dur_per_phone)
    if len(durs) != n_phones:
        raise ValueError(f"{len(durs)} durations for {n_phones} phones")
    counts = []
    for d in durs:
        n = d * VIDEO_FPS
        if abs(n - round(n)) > 1e-9 or round(n) < 1:
            raise ValueError(f"phone duration {d} s is not a positive whole number of frames at {VIDEO_FPS} fps")
        counts.append(int(round(n)))
    return counts


def _articulation_track(phones: Sequence[PhoneSpec], counts: Sequence[int]) -> np.ndarray:
    """Per-frame (aperture, width), ramped linearly across each boundary over 2 frames."""
    track = np.concatenate([np.tile([[p.aperture, p.width]], (n, 1)) for p, n in zip(phones, counts)])
    out = track.copy()
    b = 0
    for n in counts[:-1]:
        b += n
        a, c = track[b - 1], track[b]
        out[b - 1] = a + (c - a) / 3.0
        out[b] = a + 2.0 * (c - a) / 3.0
    return out


def _render_frames(track: np.ndarray, style: SpeakerStyle, height: int, width: int, rng: RngStream) -> np.ndarray:
    ss = 4  # supersampling factor per axis
    off = (np.arange(ss) + 0.5) / ss
    ys = (np.arange(height)[:, None] + off[None, :]).reshape(-1)
    xs = (np.arange(width)[:, None] + off[None, :]).reshape(-1)
    cy = height * 0.5 + style.dy
    cx = width * 0.5 + style.dx
    ry = track[:, 0] * style.scale * height * 0.22
    rx = track[:, 1] * style.scale * width * 0.32
    frames = np.empty((len(track), height, width), dtype=np.float64)
    for t in range(len(track)):
        if ry[t] <= 0 or rx[t] <= 0:
            cover = np.zeros((height, width))
        else:
            inside = ((ys[:, None] - cy) / ry[t]) ** 2 + ((xs[None, :] - cx) / rx[t]) ** 2 <= 1.0
            cover = inside.reshape(height, ss, width, ss).mean(axis=(1, 3))
        frames[t] = style.brightness * (1.0 - cover) + 0.1 * style.brightness * cover
    frames += 0.02 * rng.normal01(frames.shape)
    return np.clip(frames, 0.0, 1.0).astype(np.float32)


def _render_audio(phones: Sequence[PhoneSpec], counts: Sequence[int], style: SpeakerStyle,
                  sample_rate: int, rng: RngStream) -> np.ndarray:
    spf = sample_rate // VIDEO_FPS
    n = sum(counts) * spf
    t = np.arange(n) / sample_rate
    x = np.zeros(n)
    start = 0
    for p, c in zip(phones, counts):
        sl = slice(start * spf, (start + c) * spf)
        if p.voiced:
            x[sl] = (0.6 * np.sin(2 * np.pi * p.f1 * style.formant_shift * t[sl])
                     + 0.3 * np.sin(2 * np.pi * p.f2 * style.formant_shift * t[sl]))
        elif p.id != SILENCE:
            x[sl] = 0.15 * rng.child(("fric", start)).normal01(sl.stop - sl.start)
        start += c
    x += 0.01 * rng.normal01(n)
    # all-silence clips keep their natural (tiny) level
    if any(p.id != SILENCE for p in phones):
        x *= 0.95 / np.max(np.abs(x))
    return x.astype(np.float32)


def synth_utterance(phones: Sequence[PhoneSpec], dur_per_phone, style: int, seed: int, uid: str = "",
                    height: int = 36, width: int = 36, sample_rate: int = 16000, **labels) -> Utterance:
    """Render one utterance. ``dur_per_phone`` is seconds, scalar or one per phone."""
    if len(phones) < 1:
        raise ValueError("need at least one phone")
    if sample_rate % VIDEO_FPS:
        raise ValueError("sample_rate must be a multiple of the video frame rate")
    counts = _frame_counts(len(phones), dur_per_phone)
    st = speaker_style(style)
    rng = RngStream(seed)
    track = _articulation_track(phones, counts)
    frames = _render_frames(track, st, height, width, rng.child("video"))
    wave = _render_audio(phones, counts, st, sample_rate, rng.child("audio"))
    return Utterance(uid, frames, Waveform(wave, sample_rate), style,
                     phone_ids=tuple(p.id for p in phones), **labels)


def utterance_to_store(u: Utterance) -> ParameterStore:
    return ParameterStore([
        ("frames", u.frames),
        ("wave", u.wave.samples),
        ("sample_rate", np.array([u.wave.sample_rate], dtype=np.int32)),
        ("phone_ids", np.array(u.phone_ids or (0,), dtype=np.int32)),
    ])


def utterance_from_store(store: ParameterStore, entry: "ManifestEntry") -> Utterance:
    return Utterance(
        entry.id,
        store["frames"].numpy(),
        Waveform(store["wave"].numpy(), int(store["sample_rate"][0])),
        entry.speaker_style,
        entry.word_label,
        tuple(entry.transcript) if entry.transcript is not None else None,
        tuple(int(i) for i in store["phone_ids"].numpy()),
    )


# --------------------------------------------------------------------------
# Manifests
# --------------------------------------------------------------------------


@dataclass
class ManifestEntry:
    id: str
    split: str
    path: str
    T_v: int
    speaker_style: int
    word_label: int | None = None
    transcript: list[int] | None = None


@dataclass
class Manifest:
    name: str
    entries: list[ManifestEntry]
    lineage: dict | None = None

    def __post_init__(self):
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError(f"manifest {self.name}: duplicate utterance ids")
        for e in self.entries:
            if e.split not in SPLITS:
                raise ValueError(f"unknown split {e.split!r}")

    def __len__(self) -> int:
        return len(self.entries)

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    @property
    def manifest_id(self) -> str:
        h = hashlib.sha256(self.to_jsonl().encode())
        return h.hexdigest()[:16]

    def styles(self, *splits: str) -> set[int]:
        return {e.speaker_style for e in self.entries if e.split in splits}

    def check_style_disjoint(self) -> None:
        overlap = self.styles("pretrain", "train") & self.styles("test")
        if overlap:
            raise ValueError(f"manifest {self.name}: styles {sorted(overlap)} in both train and test")

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(e), sort_keys=True) + "\n" for e in self.entries)

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.write_text(self.to_jsonl())
        meta = {"name": self.name, "manifest_id": self.manifest_id, "lineage": self.lineage}
        path.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Manifest":
        path = Path(path)
        entries = [ManifestEntry(**json.loads(line)) for line in path.read_text().splitlines() if line.strip()]
        meta_path = path.with_suffix(".meta.json")
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {"name": path.stem, "lineage": None}
        return cls(meta["name"], entries, meta.get("lineage"))


def label_fraction_subset(m: Manifest, fraction: float, seed: int) -> Manifest:
    """Keep ceil(fraction * |train|) train entries; nested across fractions for one seed."""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    train = m.split("train")
    k = math.ceil(fraction * len(train) - 1e-9)
    if fraction * len(train) < 1 - 1e-9 or k < 1:
        raise ValueError(f"fraction {fraction} of {len(train)} train entries leaves nothing")
    order = RngStream(seed).child("label-fraction").permutation(len(train))
    keep = {train[i].id for i in order[:k]}
    entries = [e for e in m.entries if e.split != "train" or e.id in keep]
    lineage = {"parent": m.manifest_id, "fraction": fraction, "seed": seed}
    return Manifest(f"{m.name}@{fraction:g}", entries, lineage)


class TooShortError(ValueError):
    """Utterance shorter than the requested window."""


class Window(NamedTuple):
    frames: np.ndarray
    samples: np.ndarray
    start: int


def random_one_second_window(u: Utterance, rng: RngStream) -> Window:
    if u.T_v < WINDOW_FRAMES:
        raise TooShortError(f"{u.id}: {u.duration:.2f} s is shorter than 1 s")
    spf = u.wave.sample_rate // VIDEO_FPS
    s = int(rng.integers(0, u.T_v - WINDOW_FRAMES + 1))
    a = spf * s
    return Window(u.frames[s:s + WINDOW_FRAMES], u.wave.samples[a:a + WINDOW_FRAMES * spf], s)


# --------------------------------------------------------------------------
# Corpus construction
# --------------------------------------------------------------------------


@dataclass
class CorpusConfig:
    n_pretrain: int = 500
    n_words: int = 20
    word_per_class: int = 40
    n_sentences: int = 400
    n_styles: int = 8
    test_fraction: float = 0.25
    val_fraction: float = 0.1
    min_tokens: int = 2
    max_tokens: int = 12
    pretrain_seconds: tuple[float, float] = (1.0, 4.0)
    height: int = 36
    width: int = 36
    sample_rate: int = 16000
    seed: int = 0

    @property
    def test_styles(self) -> list[int]:
        return list(range(self.n_styles - max(1, self.n_styles // 4), self.n_styles))

    @property
    def train_styles(self) -> list[int]:
        return [s for s in range(self.n_styles) if s not in self.test_styles]


def word_vocabulary(n_words: int, seed: int) -> list[tuple[int, int, int]]:
    """Distinct phone triplets (no silence, no adjacent repeats), one per word class."""
    speech = [p.id for p in PHONES if p.id != SILENCE]
    triplets = [(a, b, c) for a in speech for b in speech for c in speech if a != b and b != c]
    if n_words > len(triplets):
        raise ValueError(f"at most {len(triplets)} word classes available")
    order = RngStream(seed).child("words").permutation(len(triplets))
    return [triplets[i] for i in order[:n_words]]


TOKEN_PHONES = tuple(p.id for p in PHONES if p.id != SILENCE)  # token k is phone TOKEN_PHONES[k]


def _split_counts(n: int, cfg: CorpusConfig) -> tuple[int, int, int]:
    n_test = round(n * cfg.test_fraction)
    n_val = round(n * cfg.val_fraction)
    n_train = n - n_test - n_val
    if n_test < 1 or n_train < 1:
        raise ValueError(f"cannot split {n} utterances into non-empty train/test")
    return n_train, n_val, n_test


def _durations(rng: RngStream, n: int, lo: int, hi: int) -> list[int]:
    return [int(c) for c in rng.integers(lo, hi + 1, size=n)]


def _pretext_utterance(i: int, cfg: CorpusConfig, rng: RngStream) -> Utterance:
    lo, hi = (round(s * VIDEO_FPS) for s in cfg.pretrain_seconds)
    total = int(rng.integers(lo, hi + 1))
    phones, counts = [], []
    while sum(counts) < total:
        pid = SILENCE if rng.uniform01() < 0.15 else int(rng.integers(1, len(PHONES)))
        if phones and phones[-1].id == pid:
            continue
        phones.append(PHONES[pid])
        counts.append(min(int(rng.integers(3, 7)), total - sum(counts)))
    style = cfg.train_styles[int(rng.integers(0, len(cfg.train_styles)))]
    return synth_utterance(phones, [c / VIDEO_FPS for c in counts], style, rng.torch_seed(),
                           f"pre{i:05d}", cfg.height, cfg.width, cfg.sample_rate)


def _word_utterance(uid: str, label: int, triplet, style: int, cfg: CorpusConfig, rng: RngStream) -> Utterance:
    durs = [int(rng.integers(4, 7)) for _ in range(3)]
    lead = int(rng.integers(4, WORD_FRAMES - sum(durs) - 3))
    trail = WORD_FRAMES - sum(durs) - lead
    phones = [PHONES[SILENCE]] + [PHONES[p] for p in triplet] + [PHONES[SILENCE]]
    counts = [lead] + durs + [trail]
    return synth_utterance(phones, [c / VIDEO_FPS for c in counts], style, rng.torch_seed(), uid,
                           cfg.height, cfg.width, cfg.sample_rate, word_label=label)


def _sentence_utterance(uid: str, style: int, cfg: CorpusConfig, rng: RngStream) -> Utterance:
    n_tok = int(rng.integers(cfg.min_tokens, cfg.max_tokens + 1))
    tokens: list[int] = []
    while len(tokens) < n_tok:
        k = int(rng.integers(0, len(TOKEN_PHONES)))
        if not tokens or tokens[-1] != k:
            tokens.append(k)
    counts = [int(rng.integers(3, 6))] + _durations(rng, n_tok, 3, 5) + [int(rng.integers(3, 6))]
    phones = [PHONES[SILENCE]] + [PHONES[TOKEN_PHONES[k]] for k in tokens] + [PHONES[SILENCE]]
    return synth_utterance(phones, [c / VIDEO_FPS for c in counts], style, rng.torch_seed(), uid,
                           cfg.height, cfg.width, cfg.sample_rate, transcript=tuple(tokens))


def _entry(u: Utterance, split: str) -> ManifestEntry:
    return ManifestEntry(u.id, split, f"utterances/{u.id}.lira", u.T_v, u.speaker_style, u.word_label,
                         list(u.transcript) if u.transcript is not None else None)


@dataclass
class Corpus:
    config: CorpusConfig
    pretext: Manifest
    word: Manifest
    sentence: Manifest
    utterances: dict[str, Utterance] = field(default_factory=dict, repr=False)
    root: Path | None = None

    @property
    def manifests(self) -> dict[str, Manifest]:
        return {"pretext": self.pretext, "word": self.word, "sentence": self.sentence}

    def get(self, uid_or_entry) -> Utterance:
        uid = uid_or_entry if isinstance(uid_or_entry, str) else uid_or_entry.id
        if uid not in self.utterances:
            entry = next(e for m in self.manifests.values() for e in m.entries if e.id == uid)
            if self.root is None:
                raise KeyError(uid)
            store = ParameterStore.load(self.root / entry.path)
            self.utterances[uid] = utterance_from_store(store, entry)
        return self.utterances[uid]

    def load_all(self, entries: Iterable[ManifestEntry]) -> list[Utterance]:
        return [self.get(e) for e in entries]

    def save(self, root: str | Path) -> None:
        root = Path(root)
        (root / "utterances").mkdir(parents=True, exist_ok=True)
        (root / "corpus_config.json").write_text(json.dumps(asdict(self.config), indent=2, sort_keys=True) + "\n")
        for name, m in self.manifests.items():
            m.save(root / f"{name}.jsonl")
            for e in m.entries:
                utterance_to_store(self.utterances[e.id]).save(root / e.path)
        self.root = root

    @classmethod
    def load(cls, root: str | Path) -> "Corpus":
        root = Path(root)
        raw = json.loads((root / "corpus_config.json").read_text())
        raw["pretrain_seconds"] = tuple(raw["pretrain_seconds"])
        cfg = CorpusConfig(**raw)
        ms = {n: Manifest.load(root / f"{n}.jsonl") for n in ("pretext", "word", "sentence")}
        return cls(cfg, ms["pretext"], ms["word"], ms["sentence"], {}, root)

    def with_manifest(self, kind: str, m: Manifest) -> "Corpus":
        return replace(self, **{kind: m})


def build_corpus(cfg: CorpusConfig) -> Corpus:
    """Generate pretext, word-level and sentence-level manifests (held in memory)."""
    if cfg.n_styles < 4:
        raise ValueError("need n_styles >= 4 so train and test styles can be disjoint")
    if cfg.min_tokens < 1 or cfg.max_tokens < cfg.min_tokens:
        raise ValueError("bad token length range")
    root = RngStream(cfg.seed)
    utts: dict[str, Utterance] = {}

    pre_entries = []
    for i in range(cfg.n_pretrain):
        u = _pretext_utterance(i, cfg, root.child(("pretext", i)))
        utts[u.id] = u
        pre_entries.append(_entry(u, "pretrain"))

    vocab = word_vocabulary(cfg.n_words, cfg.seed)
    n_train, n_val, n_test = _split_counts(cfg.word_per_class, cfg)
    word_entries = []
    for label, triplet in enumerate(vocab):
        for j in range(cfg.word_per_class):
            split = "train" if j < n_train else "val" if j < n_train + n_val else "test"
            rng = root.child(("word", label, j))
            styles = cfg.test_styles if split == "test" else cfg.train_styles
            style = styles[int(rng.integers(0, len(styles)))]
            u = _word_utterance(f"w{label:03d}_{j:04d}", label, triplet, style, cfg, rng)
            utts[u.id] = u
            word_entries.append(_entry(u, split))

    n_train, n_val, n_test = _split_counts(cfg.n_sentences, cfg)
    sent_entries = []
    for j in range(cfg.n_sentences):
        split = "train" if j < n_train else "val" if j < n_train + n_val else "test"
        rng = root.child(("sentence", j))
        styles = cfg.test_styles if split == "test" else cfg.train_styles
        style = styles[int(rng.integers(0, len(styles)))]
        u = _sentence_utterance(f"s{j:05d}", style, cfg, rng)
        utts[u.id] = u
        sent_entries.append(_entry(u, split))

    corpus = Corpus(cfg, Manifest("pretext", pre_entries), Manifest("word", word_entries),
                    Manifest("sentence", sent_entries), utts)
    for m in corpus.manifests.values():
        m.check_style_disjoint()
    return corpus
