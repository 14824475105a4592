"""Assembled models, size presets, layer taps and checkpoints.

Parameter names are hierarchical with "/" separators and a fixed top level:
``encoder/`` (spatial + conformer), ``head/``, ``mstcn/``, ``backend/``,
``ctc/`` and ``decoder/``. Encoder-only export is ``store.select("encoder/")``.
"""
from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import torch
from torch import nn

from ..substrate import ParameterStore
from .conformer import ConformerConfig, ConformerEncoder
from .decoder import DecoderConfig, TokenLayout, TransformerDecoder
from .heads import MSTCN, MSTCNConfig, ProjectionHead, ProjectionHeadConfig
from .spatial import SpatialEncoder, SpatialEncoderConfig


@dataclass
class ModelConfig:
    spatial: SpatialEncoderConfig = field(default_factory=SpatialEncoderConfig)
    conformer: ConformerConfig = field(default_factory=ConformerConfig)
    head: ProjectionHeadConfig = field(default_factory=ProjectionHeadConfig)
    mstcn: MSTCNConfig = field(default_factory=MSTCNConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    n_tokens: int = 8

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        sub = {
            "spatial": SpatialEncoderConfig, "conformer": ConformerConfig, "head": ProjectionHeadConfig,
            "mstcn": MSTCNConfig, "decoder": DecoderConfig,
        }
        out = {}
        for k, v in d.items():
            if k not in kinds:
                raise KeyError(f"unknown model config key {k!r}")
            out[k] = sub[k](**v) if k in sub else v
        return cls(**out)


def preset(name: str) -> ModelConfig:
    """Named configurations: "desk" (default experiments), "mini" (gradient checks), "paper" (shapes only)."""
    if name == "desk":
        return ModelConfig()
    if name == "mini":
        return ModelConfig(
            SpatialEncoderConfig((3, 3, 3), 2, ((2, 1), (4, 2)), 8),
            # short sequences need a short wavelength base, or the slow sinusoid columns are constant
            ConformerConfig(n_blocks=2, d_model=8, d_ff=16, n_head=2, d_q=8, d_k=8, d_v=8, conv_kernel=3, pos_base=10.0),
            ProjectionHeadConfig(hidden=8, out_dim=4),
            MSTCNConfig(kernels=(3, 5), channels=2, n_layers=1, n_classes=3),
            DecoderConfig(n_blocks=1, d_model=8, d_ff=16, n_head=2, d_k=8, d_v=8),
            n_tokens=3,
        )
    if name == "paper":
        return ModelConfig(
            SpatialEncoderConfig((5, 7, 7), 64, ((64, 1), (128, 2), (256, 2), (512, 2)), 512, blocks_per_stage=2),
            ConformerConfig(n_blocks=12, d_model=256, d_ff=2048, n_head=4, d_q=256, d_k=256, d_v=256,
                            conv_kernel=31, input_dim=512),
            ProjectionHeadConfig(hidden=256, out_dim=256),
            MSTCNConfig(kernels=(3, 5, 7), channels=256, n_layers=4, n_classes=500),
            DecoderConfig(n_blocks=12, d_model=256, d_ff=2048, n_head=4, d_k=256, d_v=256),
            n_tokens=40,
        )
    raise KeyError(f"unknown preset {name!r}; choose desk, mini or paper")


def length_mask(lengths: torch.Tensor | None, T: int) -> torch.Tensor | None:
    if lengths is None:
        return None
    return torch.arange(T)[None, :] < lengths[:, None]


class VisualEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.spatial = SpatialEncoder(cfg.spatial)
        conf = ConformerConfig(**{**asdict(cfg.conformer), "input_dim": cfg.spatial.output_dim})
        self.conformer = ConformerEncoder(conf)

    @property
    def tap_names(self) -> list[str]:
        return self.spatial.tap_names + self.conformer.tap_names

    def tap_dim(self, tap: str) -> int:
        self.check_tap(tap)
        if tap.startswith("res-"):
            return self.spatial.tap_dim(tap)
        return self.conformer.cfg.d_model

    def check_tap(self, tap: str) -> None:
        if tap not in self.tap_names:
            raise KeyError(f"unknown tap {tap!r}; valid taps: {', '.join(self.tap_names)}")

    @property
    def last_tap(self) -> str:
        return self.conformer.tap_names[-1]

    def forward(self, clips, lengths=None, upto: str | None = None, taps: dict | None = None):
        if upto is not None:
            self.check_tap(upto)
        x = self.spatial(clips, upto=upto if upto in self.spatial.tap_names else None, taps=taps)
        if upto in self.spatial.tap_names:
            return x
        return self.conformer(x, length_mask(lengths, clips.shape[1]), upto=upto, taps=taps)


class _FrozenEncoderMixin:
    """Keeps ``encoder`` in eval mode with gradients off when ``frozen``."""

    def freeze_encoder(self):
        self.frozen = True
        for p in self.encoder.parameters():
            p.requires_grad_(False)
        self.encoder.eval()

    def train(self, mode: bool = True):
        super().train(mode)
        if getattr(self, "frozen", False):
            self.encoder.eval()
        return self

    def encoder_features(self, clips, lengths=None):
        if self.frozen:
            with torch.no_grad():
                return self.encoder(clips, lengths, upto=self.tap)
        return self.encoder(clips, lengths, upto=self.tap)


class PretextModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.encoder = VisualEncoder(cfg)
        self.head = ProjectionHead(cfg.conformer.d_model, cfg.head)

    def forward(self, clips, lengths=None):
        return self.head(self.encoder(clips, lengths))


class FeatureStandardizer(nn.Module):
    """Fixed per-dimension affine map (x - mean) / std; identity until ``fit``.

    Stored as non-trainable parameters so checkpoints carry it.
    """

    def __init__(self, dim: int):
        super().__init__()
        self.mean = nn.Parameter(torch.zeros(dim), requires_grad=False)
        self.std = nn.Parameter(torch.ones(dim), requires_grad=False)

    @torch.no_grad()
    def fit(self, feats: torch.Tensor, floor: float = 1e-5) -> None:
        flat = feats.reshape(-1, feats.shape[-1])
        self.mean.copy_(flat.mean(dim=0))
        self.std.copy_(flat.std(dim=0).clamp(min=floor))

    def forward(self, x):
        return (x - self.mean) / self.std


class WordModel(_FrozenEncoderMixin, nn.Module):
    """Encoder (up to ``tap``) + MS-TCN classifier."""

    def __init__(self, cfg: ModelConfig, tap: str | None = None, frozen: bool = False):
        super().__init__()
        self.encoder = VisualEncoder(cfg)
        self.tap = tap or self.encoder.last_tap
        self.frozen = False
        self.norm = FeatureStandardizer(self.encoder.tap_dim(self.tap))
        self.mstcn = MSTCN(self.encoder.tap_dim(self.tap), cfg.mstcn)
        if frozen:
            self.freeze_encoder()

    def forward(self, clips):
        return self.mstcn(self.norm(self.encoder_features(clips)))


class SentenceModel(_FrozenEncoderMixin, nn.Module):
    """Encoder + CTC projection + attention decoder.

    When frozen, features from ``tap`` feed a fresh ``backend`` conformer.
    """

    def __init__(self, cfg: ModelConfig, tap: str | None = None, frozen: bool = False):
        super().__init__()
        self.layout = TokenLayout(cfg.n_tokens)
        self.encoder = VisualEncoder(cfg)
        self.frozen = False
        self.tap = tap or self.encoder.last_tap
        self.backend = None
        if frozen:
            backend_cfg = ConformerConfig(**{**asdict(cfg.conformer), "input_dim": self.encoder.tap_dim(self.tap)})
            self.backend = ConformerEncoder(backend_cfg)
            self.freeze_encoder()
        d = cfg.conformer.d_model
        self.ctc = nn.Linear(d, self.layout.ctc_size)
        self.decoder = TransformerDecoder(cfg.decoder, self.layout)

    def encode(self, clips, lengths=None):
        x = self.encoder_features(clips, lengths)
        if self.backend is not None:
            x = self.backend(x, length_mask(lengths, clips.shape[1]))
        return x

    def ctc_logprobs(self, memory):
        return torch.log_softmax(self.ctc(memory), dim=-1)

    def forward(self, clips, lengths, prefix, prefix_lengths=None):
        memory = self.encode(clips, lengths)
        mask = length_mask(lengths, clips.shape[1])
        return self.ctc_logprobs(memory), self.decoder(prefix, memory, mask, prefix_lengths)


def tap_features(model: nn.Module, tap: str, clips: torch.Tensor, lengths=None) -> torch.Tensor:
    """Intermediate activations at ``tap`` with dropout off; parameters untouched."""
    encoder = model.encoder if hasattr(model, "encoder") else model
    encoder.check_tap(tap)
    was_training = encoder.training
    encoder.eval()
    try:
        with torch.no_grad():
            return encoder(clips, lengths, upto=tap)
    finally:
        encoder.train(was_training)


def parameter_report(model: nn.Module) -> "OrderedDict[str, int]":
    """Parameter counts per top-level submodule, in registration order."""
    report = OrderedDict()
    for name, child in model.named_children():
        n = sum(p.numel() for p in child.parameters())
        if n:
            report[name] = n
    report["total"] = sum(p.numel() for p in model.parameters())
    return report


def save_checkpoint(path: str | Path, model: nn.Module, cfg: ModelConfig, **meta) -> None:
    """Write ``path`` (parameter container) and ``path.json`` (config + metadata)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ParameterStore.from_module(model).save(path)
    sidecar = {"model": cfg.to_dict(), "meta": meta}
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path: str | Path) -> tuple[ParameterStore, ModelConfig, dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} not found")
    store = ParameterStore.load(path)
    sidecar = json.loads(Path(str(path) + ".json").read_text())
    return store, ModelConfig.from_dict(sidecar["model"]), sidecar.get("meta", {})


def load_encoder(model: nn.Module, store: ParameterStore) -> list[str]:
    """Copy every ``encoder/`` entry of ``store`` into ``model.encoder``."""
    enc = store.select("encoder/", strip=True)
    if not len(enc):
        raise KeyError("checkpoint has no encoder/ parameters")
    return enc.load_into(model.encoder, prefix="", strict=True)
