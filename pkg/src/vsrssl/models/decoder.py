"""Autoregressive transformer decoder over encoder memory."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .conformer import FeedForward, sinusoid


@dataclass
class DecoderConfig:
    n_blocks: int = 2
    d_model: int = 32
    d_ff: int = 64
    n_head: int = 2
    d_k: int = 32
    d_v: int = 32
    dropout: float = 0.1


@dataclass(frozen=True)
class TokenLayout:
    """Id layout shared by the CTC and attention branches.

    CTC classes: 0 = blank, 1..n = tokens. Decoder classes: 0 = pad,
    1..n = tokens, n+1 = sos, n+2 = eos.
    """

    n_tokens: int

    blank = 0
    pad = 0

    @property
    def sos(self) -> int:
        return self.n_tokens + 1

    @property
    def eos(self) -> int:
        return self.n_tokens + 2

    @property
    def ctc_size(self) -> int:
        return self.n_tokens + 1

    @property
    def decoder_size(self) -> int:
        return self.n_tokens + 3

    def encode(self, tokens) -> list[int]:
        return [int(t) + 1 for t in tokens]

    def decode(self, ids) -> list[int]:
        return [int(i) - 1 for i in ids]


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, n_head: int, d_k: int, d_v: int, dropout: float):
        super().__init__()
        self.h, self.dk, self.dv = n_head, d_k // n_head, d_v // n_head
        self.linear_q = nn.Linear(d_model, d_k)
        self.linear_k = nn.Linear(d_model, d_k, bias=False)
        self.linear_v = nn.Linear(d_model, d_v)
        self.linear_out = nn.Linear(d_v, d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, q_in, kv_in, mask=None):
        """``mask`` broadcasts to (B, Lq, Lk); True marks allowed keys."""
        B, Lq, _ = q_in.shape
        Lk = kv_in.shape[1]
        q = self.linear_q(q_in).view(B, Lq, self.h, self.dk).transpose(1, 2)
        k = self.linear_k(kv_in).view(B, Lk, self.h, self.dk).transpose(1, 2)
        v = self.linear_v(kv_in).view(B, Lk, self.h, self.dv).transpose(1, 2)
        s = q @ k.transpose(-1, -2) / math.sqrt(self.dk)
        if mask is not None:
            s = s.masked_fill(~mask[:, None], float("-inf"))
        attn = torch.softmax(s, dim=-1)
        if mask is not None:
            attn = attn.masked_fill(~mask[:, None], 0.0)
        out = (self.dropout(attn) @ v).transpose(1, 2).reshape(B, Lq, -1)
        return self.linear_out(out)


class DecoderBlock(nn.Module):
    def __init__(self, cfg: DecoderConfig):
        super().__init__()
        d = cfg.d_model
        self.self_norm = nn.LayerNorm(d)
        self.self_attn = MultiHeadAttention(d, cfg.n_head, cfg.d_k, cfg.d_v, cfg.dropout)
        self.src_norm = nn.LayerNorm(d)
        self.src_attn = MultiHeadAttention(d, cfg.n_head, cfg.d_k, cfg.d_v, cfg.dropout)
        self.ffn = FeedForward(d, cfg.d_ff, cfg.dropout)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, y, self_mask, memory, memory_mask):
        h = self.self_norm(y)
        y = y + self.dropout(self.self_attn(h, h, self_mask))
        y = y + self.dropout(self.src_attn(self.src_norm(y), memory, memory_mask))
        return y + self.ffn(y)


class TransformerDecoder(nn.Module):
    def __init__(self, cfg: DecoderConfig, layout: TokenLayout):
        super().__init__()
        self.cfg = cfg
        self.layout = layout
        self.embed = nn.Embedding(layout.decoder_size, cfg.d_model)
        self.blocks = nn.ModuleList(DecoderBlock(cfg) for _ in range(cfg.n_blocks))
        self.out_norm = nn.LayerNorm(cfg.d_model)
        self.output = nn.Linear(cfg.d_model, layout.decoder_size)

    def forward(self, prefix: torch.Tensor, memory: torch.Tensor, memory_mask: torch.Tensor | None = None,
                prefix_lengths: torch.Tensor | None = None) -> torch.Tensor:
        """Next-token logits (B, L, vocab) for prefixes (B, L) starting with sos.

        Position i sees prefix[:i+1] and the whole (unmasked) memory only.
        """
        if memory.shape[1] < 1:
            raise ValueError("empty encoder sequence")
        if prefix.dim() != 2 or prefix.shape[1] < 1:
            raise ValueError("prefix must be (B, L) with L >= 1")
        if bool((prefix[:, 0] != self.layout.sos).any()):
            raise ValueError("every prefix must begin with sos")
        if bool(((prefix < 0) | (prefix >= self.layout.decoder_size)).any()):
            raise ValueError(f"token id outside [0, {self.layout.decoder_size})")
        B, L = prefix.shape
        causal = torch.ones(L, L, dtype=torch.bool).tril()
        self_mask = causal[None].expand(B, L, L)
        if prefix_lengths is not None:
            valid = torch.arange(L)[None, :] < prefix_lengths[:, None]
            self_mask = self_mask & valid[:, None, :]
        mem_mask = None if memory_mask is None else memory_mask[:, None, :]
        pe = sinusoid(torch.arange(L), self.cfg.d_model).to(memory.dtype)
        y = self.embed(prefix) * math.sqrt(self.cfg.d_model) + pe
        for block in self.blocks:
            y = block(y, self_mask, memory, mem_mask)
        return self.output(self.out_norm(y))
