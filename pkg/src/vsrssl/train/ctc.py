"""CTC negative log-likelihood by the forward recursion over blank-expanded targets."""
from __future__ import annotations

from typing import Sequence

import torch

# Finite stand-in for log(0): keeps logsumexp gradients free of NaNs.
NEG = -1e30


def ctc_min_frames(target: Sequence[int]) -> int:
    """Fewest frames that can emit ``target``: one per label plus a blank between repeats."""
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def ctc_feasible(T: int, target: Sequence[int]) -> bool:
    return ctc_min_frames(target) <= T


def ctc_loss_batch(logprobs: torch.Tensor, lengths: torch.Tensor | Sequence[int],
                   targets: Sequence[Sequence[int]], blank: int = 0) -> torch.Tensor:
    """Per-sequence -log p(target | logprobs), shape (B,).

    ``logprobs`` is (B, T, C) log-normalised over C. Infeasible targets yield
    +inf; callers decide whether to skip them.
    """
    B, T, C = logprobs.shape
    lengths = torch.as_tensor(lengths, dtype=torch.long)
    L = max((len(t) for t in targets), default=0)
    S = 2 * L + 1
    ext = torch.full((B, S), blank, dtype=torch.long)
    for b, tgt in enumerate(targets):
        if len(tgt):
            ext[b, 1:2 * len(tgt):2] = torch.as_tensor(list(tgt), dtype=torch.long)
    # skip transition s-2 -> s allowed for labels differing from the label two slots back
    skip = torch.zeros(B, S, dtype=torch.bool)
    skip[:, 2:] = (ext[:, 2:] != blank) & (ext[:, 2:] != ext[:, :-2])
    neg = logprobs.new_full((B, 1), NEG)

    emit = torch.gather(logprobs, 2, ext[:, None, :].expand(B, T, S))  # (B, T, S)
    alpha = logprobs.new_full((B, S), NEG)
    alpha[:, 0] = emit[:, 0, 0]
    if S > 1:
        alpha[:, 1] = emit[:, 0, 1]
    for t in range(1, T):
        stay = alpha
        step = torch.cat([neg, alpha[:, :-1]], dim=1)
        jump = torch.cat([neg, neg, alpha[:, :-2]], dim=1) if S > 2 else torch.full_like(alpha, NEG)
        jump = torch.where(skip, jump, torch.full_like(jump, NEG))
        new = torch.logsumexp(torch.stack([stay, step, jump]), dim=0) + emit[:, t]
        alpha = torch.where((t < lengths)[:, None], new, alpha)

    losses = []
    for b, tgt in enumerate(targets):
        end = 2 * len(tgt)
        if not ctc_feasible(int(lengths[b]), tgt):
            losses.append(logprobs.new_tensor(float("inf")))
            continue
        final = alpha[b, end] if end == 0 else torch.logaddexp(alpha[b, end], alpha[b, end - 1])
        losses.append(-final)
    return torch.stack(losses)


def ctc_loss(logprobs: torch.Tensor, target: Sequence[int], blank: int = 0) -> torch.Tensor:
    """-log p(target | logprobs) for one (T, V+1) sequence; +inf when infeasible."""
    if logprobs.dim() != 2:
        raise ValueError(f"expected (T, V+1) log-probabilities, got shape {tuple(logprobs.shape)}")
    return ctc_loss_batch(logprobs[None], [logprobs.shape[0]], [list(target)], blank)[0]
