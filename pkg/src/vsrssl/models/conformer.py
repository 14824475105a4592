"""Conformer encoder with relative-position self-attention.

Attention scores follow the shift-based relative formulation:
score(i, j) = (q_i + u) . k_j + (q_i + v) . W_r r_{i-j}, scaled by 1/sqrt(d_head),
where r_d is a sinusoidal encoding of the signed offset d and u, v are learned
per-head biases.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn


@dataclass
class ConformerConfig:
    n_blocks: int = 2
    d_model: int = 32
    d_ff: int = 64
    n_head: int = 2
    d_q: int = 32
    d_k: int = 32
    d_v: int = 32
    conv_kernel: int = 7
    dropout: float = 0.1
    input_dim: int | None = None  # defaults to d_model
    pos_base: float = 10000.0  # sinusoid wavelength base for relative offsets

    def __post_init__(self):
        if self.d_q != self.d_k:
            raise ValueError("d_q must equal d_k")
        if self.d_k % self.n_head or self.d_v % self.n_head:
            raise ValueError("d_k and d_v must be divisible by n_head")
        if self.conv_kernel % 2 == 0:
            raise ValueError("conv_kernel must be odd")


def sinusoid(positions: torch.Tensor, dim: int, base: float = 10000.0) -> torch.Tensor:
    """Sinusoidal encoding for (possibly negative) positions -> (len, dim)."""
    half = torch.arange(0, dim, 2, dtype=torch.float64)
    freq = torch.exp(-math.log(base) * half / dim)
    angles = positions.to(torch.float64)[:, None] * freq[None, :]
    out = torch.zeros(len(positions), dim, dtype=torch.float64)
    out[:, 0::2] = torch.sin(angles)
    out[:, 1::2] = torch.cos(angles[:, : dim // 2])
    return out


def relative_positions(T: int, dim: int, dtype=torch.float32, base: float = 10000.0) -> torch.Tensor:
    """Encodings for offsets T-1, T-2, ..., -(T-1); shape (2T-1, dim)."""
    return sinusoid(torch.arange(T - 1, -T, -1), dim, base).to(dtype)


def rel_shift(x: torch.Tensor) -> torch.Tensor:
    """(..., T, 2T-1) indexed by offset slot -> (..., T, T) with [i, j] = offset i - j."""
    T = x.shape[-2]
    i = torch.arange(T)[:, None]
    j = torch.arange(T)[None, :]
    idx = (T - 1 - i + j).expand(*x.shape[:-1], T)
    return torch.gather(x, -1, idx)


class RelMultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, n_head: int, d_k: int, d_v: int, dropout: float):
        super().__init__()
        self.h = n_head
        self.dk = d_k // n_head
        self.dv = d_v // n_head
        self.linear_q = nn.Linear(d_model, d_k)
        # a key bias only shifts each score row by a constant, which softmax ignores
        self.linear_k = nn.Linear(d_model, d_k, bias=False)
        self.linear_v = nn.Linear(d_model, d_v)
        self.linear_pos = nn.Linear(d_model, d_k, bias=False)
        self.linear_out = nn.Linear(d_v, d_model)
        self.pos_bias_u = nn.Parameter(torch.empty(n_head, self.dk))
        self.pos_bias_v = nn.Parameter(torch.empty(n_head, self.dk))
        nn.init.xavier_uniform_(self.pos_bias_u)
        nn.init.xavier_uniform_(self.pos_bias_v)
        self.dropout = nn.Dropout(dropout)

    def _heads(self, x, d):
        B, T, _ = x.shape
        return x.view(B, T, self.h, d).transpose(1, 2)

    def scores(self, x: torch.Tensor, pos: torch.Tensor) -> torch.Tensor:
        """Pre-softmax scores (B, H, T, T) for input (B, T, d_model)."""
        q = self._heads(self.linear_q(x), self.dk)
        k = self._heads(self.linear_k(x), self.dk)
        p = self.linear_pos(pos).view(-1, self.h, self.dk).transpose(0, 1)  # H, 2T-1, dk
        content = (q + self.pos_bias_u[None, :, None, :]) @ k.transpose(-1, -2)
        position = rel_shift((q + self.pos_bias_v[None, :, None, :]) @ p.transpose(-1, -2))
        return (content + position) / math.sqrt(self.dk)

    def forward(self, x: torch.Tensor, pos: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        s = self.scores(x, pos)
        if mask is not None:
            s = s.masked_fill(~mask[:, None, None, :], float("-inf"))
        attn = self.dropout(torch.softmax(s, dim=-1))
        v = self._heads(self.linear_v(x), self.dv)
        out = (attn @ v).transpose(1, 2).reshape(x.shape[0], x.shape[1], -1)
        return self.linear_out(out)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, d_ff: int, dropout: float):
        super().__init__()
        self.norm = nn.LayerNorm(d_model)
        self.w_1 = nn.Linear(d_model, d_ff)
        self.w_2 = nn.Linear(d_ff, d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x):
        y = self.dropout(nn.functional.silu(self.w_1(self.norm(x))))
        return self.dropout(self.w_2(y))


class ConvModule(nn.Module):
    def __init__(self, d_model: int, kernel: int, dropout: float):
        super().__init__()
        self.norm = nn.LayerNorm(d_model)
        self.pointwise_in = nn.Conv1d(d_model, 2 * d_model, 1)
        self.depthwise = nn.Conv1d(d_model, d_model, kernel, padding=kernel // 2, groups=d_model)
        self.depth_norm = nn.LayerNorm(d_model)
        self.pointwise_out = nn.Conv1d(d_model, d_model, 1)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, mask=None):
        y = self.norm(x).transpose(1, 2)
        y = nn.functional.glu(self.pointwise_in(y), dim=1)
        if mask is not None:
            y = y.masked_fill(~mask[:, None, :], 0.0)
        y = self.depthwise(y).transpose(1, 2)
        y = nn.functional.silu(self.depth_norm(y)).transpose(1, 2)
        return self.dropout(self.pointwise_out(y).transpose(1, 2))


class ConformerBlock(nn.Module):
    """FFN/2 -> MHSA -> Conv -> FFN/2 -> LayerNorm, each with a residual."""

    def __init__(self, cfg: ConformerConfig):
        super().__init__()
        d = cfg.d_model
        self.ffn1 = FeedForward(d, cfg.d_ff, cfg.dropout)
        self.attn_norm = nn.LayerNorm(d)
        self.attn = RelMultiHeadAttention(d, cfg.n_head, cfg.d_k, cfg.d_v, cfg.dropout)
        self.attn_dropout = nn.Dropout(cfg.dropout)
        self.conv = ConvModule(d, cfg.conv_kernel, cfg.dropout)
        self.ffn2 = FeedForward(d, cfg.d_ff, cfg.dropout)
        self.out_norm = nn.LayerNorm(d)

    def forward(self, x, pos, mask=None):
        x = x + 0.5 * self.ffn1(x)
        x = x + self.attn_dropout(self.attn(self.attn_norm(x), pos, mask))
        x = x + self.conv(x, mask)
        x = x + 0.5 * self.ffn2(x)
        return self.out_norm(x)


class ConformerEncoder(nn.Module):
    """(B, T, input_dim) -> (B, T, d_model); taps "ce-b1".."ce-bN" after each block."""

    def __init__(self, cfg: ConformerConfig):
        super().__init__()
        self.cfg = cfg
        d_in = cfg.input_dim or cfg.d_model
        self.embed = nn.Linear(d_in, cfg.d_model)
        self.embed_norm = nn.LayerNorm(cfg.d_model)
        self.embed_dropout = nn.Dropout(cfg.dropout)
        self.blocks = nn.ModuleList(ConformerBlock(cfg) for _ in range(cfg.n_blocks))

    @property
    def tap_names(self) -> list[str]:
        return [f"ce-b{i + 1}" for i in range(len(self.blocks))]

    def embed_input(self, x):
        return torch.relu(self.embed_dropout(self.embed_norm(self.embed(x))))

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None, upto: str | None = None,
                taps: dict | None = None) -> torch.Tensor:
        x = self.embed_input(x)
        pos = relative_positions(x.shape[1], self.cfg.d_model, x.dtype, self.cfg.pos_base)
        for i, block in enumerate(self.blocks):
            x = block(x, pos, mask)
            name = f"ce-b{i + 1}"
            if taps is not None:
                taps[name] = x
            if upto == name:
                return x
        return x
