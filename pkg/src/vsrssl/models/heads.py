from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn


@dataclass
class ProjectionHeadConfig:
    hidden: int = 64
    out_dim: int = 20
    dropout: float = 0.1


class ProjectionHead(nn.Module):
    """Row-wise MLP: linear -> ReLU -> dropout -> linear."""

    def __init__(self, d_in: int, cfg: ProjectionHeadConfig):
        super().__init__()
        self.fc1 = nn.Linear(d_in, cfg.hidden)
        self.dropout = nn.Dropout(cfg.dropout)
        self.fc2 = nn.Linear(cfg.hidden, cfg.out_dim)

    def forward(self, x):
        return self.fc2(self.dropout(torch.relu(self.fc1(x))))


@dataclass
class MSTCNConfig:
    kernels: tuple[int, ...] = (3, 5, 7)
    channels: int = 16  # per branch
    n_layers: int = 2
    n_stages: int = 1
    n_classes: int = 20
    dropout: float = 0.2

    def __post_init__(self):
        self.kernels = tuple(self.kernels)
        if any(k % 2 == 0 for k in self.kernels):
            raise ValueError("branch kernels must be odd")


class MultiScaleLayer(nn.Module):
    """Parallel dilated temporal convolutions, concatenated on channels.

    Replicate padding keeps a time-constant input constant at every position.
    """

    def __init__(self, c_in: int, cfg: MSTCNConfig, dilation: int):
        super().__init__()
        self.branches = nn.ModuleList(
            nn.Conv1d(c_in, cfg.channels, k, padding=dilation * (k // 2), dilation=dilation,
                      padding_mode="replicate")
            for k in cfg.kernels
        )
        c_out = cfg.channels * len(cfg.kernels)
        self.norm = nn.LayerNorm(c_out)
        self.dropout = nn.Dropout(cfg.dropout)
        self.skip = nn.Conv1d(c_in, c_out, 1) if c_in != c_out else None

    def forward(self, x):  # (B, C, T)
        y = torch.cat([b(x) for b in self.branches], dim=1)
        y = self.dropout(torch.relu(self.norm(y.transpose(1, 2)).transpose(1, 2)))
        return y + (x if self.skip is None else self.skip(x))


class MSTCN(nn.Module):
    """(B, T, d_in) -> (B, n_classes): multi-scale TCN, temporal mean, linear classifier."""

    def __init__(self, d_in: int, cfg: MSTCNConfig):
        super().__init__()
        self.cfg = cfg
        layers, c = [], d_in
        for _ in range(cfg.n_stages):
            for i in range(cfg.n_layers):
                layers.append(MultiScaleLayer(c, cfg, dilation=2 ** i))
                c = cfg.channels * len(cfg.kernels)
        self.layers = nn.ModuleList(layers)
        self.classifier = nn.Linear(c, cfg.n_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] < max(self.cfg.kernels):
            raise ValueError(f"sequence of {x.shape[1]} frames shorter than largest kernel {max(self.cfg.kernels)}")
        y = x.transpose(1, 2)
        for layer in self.layers:
            y = layer(y)
        return self.classifier(y.mean(dim=2))
