"""3D front-end followed by 2D residual stages applied frame by frame."""
from __future__ import annotations

from dataclasses import dataclass
from math import prod

import torch
from torch import nn


@dataclass
class SpatialEncoderConfig:
    frontend_kernel: tuple[int, int, int] = (5, 7, 7)
    frontend_channels: int = 8
    res_stages: tuple[tuple[int, int], ...] = ((8, 1), (16, 2), (16, 1), (32, 2))
    output_dim: int = 32
    blocks_per_stage: int = 1

    def __post_init__(self):
        self.frontend_kernel = tuple(self.frontend_kernel)
        self.res_stages = tuple(tuple(s) for s in self.res_stages)
        if any(k % 2 == 0 for k in self.frontend_kernel):
            raise ValueError("front-end kernel extents must be odd")

    @property
    def min_extent(self) -> int:
        # front-end conv and max-pool each halve the image, then the stage strides
        return 4 * prod(s for _, s in self.res_stages)


class BasicBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, stride: int):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, stride, 1, bias=False)
        self.norm1 = nn.GroupNorm(1, c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, 1, 1, bias=False)
        self.norm2 = nn.GroupNorm(1, c_out)
        self.shortcut = None
        if stride != 1 or c_in != c_out:
            self.shortcut = nn.Sequential(nn.Conv2d(c_in, c_out, 1, stride, bias=False), nn.GroupNorm(1, c_out))

    def forward(self, x):
        y = torch.relu(self.norm1(self.conv1(x)))
        y = self.norm2(self.conv2(y))
        skip = x if self.shortcut is None else self.shortcut(x)
        return torch.relu(y + skip)


class SpatialEncoder(nn.Module):
    """(B, T, H, W) clips -> (B, T, output_dim), one vector per frame.

    The temporal axis is only touched by the front-end convolution (stride 1,
    symmetric padding), so sequence length is preserved and frame t depends
    only on frames within the kernel's temporal reach.
    """

    def __init__(self, cfg: SpatialEncoderConfig):
        super().__init__()
        self.cfg = cfg
        kt, kh, kw = cfg.frontend_kernel
        c0 = cfg.frontend_channels
        self.frontend = nn.Conv3d(1, c0, cfg.frontend_kernel, stride=(1, 2, 2),
                                  padding=(kt // 2, kh // 2, kw // 2), bias=False)
        self.frontend_norm = nn.GroupNorm(1, c0)
        self.pool = nn.MaxPool2d(3, 2, 1)
        stages, c = [], c0
        for c_out, stride in cfg.res_stages:
            blocks = [BasicBlock(c, c_out, stride)]
            blocks += [BasicBlock(c_out, c_out, 1) for _ in range(cfg.blocks_per_stage - 1)]
            stages.append(nn.Sequential(*blocks))
            c = c_out
        self.stages = nn.ModuleList(stages)
        self.proj = nn.Linear(c, cfg.output_dim) if c != cfg.output_dim else None

    @property
    def tap_names(self) -> list[str]:
        return [f"res-b{i + 1}" for i in range(len(self.stages))]

    def tap_dim(self, name: str) -> int:
        i = self.tap_names.index(name)
        if i == len(self.stages) - 1:
            return self.cfg.output_dim
        return self.cfg.res_stages[i][0]

    def forward(self, clips: torch.Tensor, upto: str | None = None, taps: dict | None = None) -> torch.Tensor:
        if clips.dim() != 4:
            raise ValueError(f"expected (B, T, H, W) clips, got shape {tuple(clips.shape)}")
        B, T, H, W = clips.shape
        need = self.cfg.min_extent
        if H < need or W < need:
            raise ValueError(f"spatial extent {H}x{W} too small; need at least {need}x{need}")
        x = self.frontend(clips.unsqueeze(1))
        # fold time into batch before normalising, so statistics never mix frames
        C, h, w = x.shape[1], x.shape[3], x.shape[4]
        x = x.transpose(1, 2).reshape(B * T, C, h, w)
        x = self.pool(torch.relu(self.frontend_norm(x)))
        last = len(self.stages) - 1
        for i, stage in enumerate(self.stages):
            x = stage(x)
            name = f"res-b{i + 1}"
            if taps is not None or upto == name or i == last:
                pooled = x.mean(dim=(2, 3)).reshape(B, T, -1)
                if i == last and self.proj is not None:
                    pooled = self.proj(pooled)
                if taps is not None:
                    taps[name] = pooled
                if upto == name or i == last:
                    return pooled
        raise AssertionError("unreachable")
