from __future__ import annotations

from typing import Sequence

import torch

from .ctc import ctc_loss_batch


def l1_pretext_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean absolute error over every element."""
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {tuple(pred.shape)} != target shape {tuple(target.shape)}")
    return (pred - target).abs().mean()


def soft_cross_entropy(logits: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    """Batch mean of -sum_c w_c log softmax(logits)_c (soft labels from mixup)."""
    return -(weights * torch.log_softmax(logits, dim=-1)).sum(dim=-1).mean()


def label_smoothed_ce(logits: torch.Tensor, targets: torch.Tensor, smoothing: float = 0.1,
                      ignore_index: int = 0) -> torch.Tensor:
    """Token-mean cross-entropy against (1 - eps) one-hot + eps uniform, skipping ``ignore_index``."""
    logp = torch.log_softmax(logits, dim=-1)
    keep = targets != ignore_index
    nll = -torch.gather(logp, -1, targets.clamp(min=0)[..., None])[..., 0]
    uniform = -logp.mean(dim=-1)
    per_token = (1.0 - smoothing) * nll + smoothing * uniform
    return per_token[keep].sum() / keep.sum().clamp(min=1)


def joint_loss(ctc_logprobs: torch.Tensor, lengths: torch.Tensor, ctc_targets: Sequence[Sequence[int]],
               decoder_logits: torch.Tensor, decoder_targets: torch.Tensor, ctc_weight: float,
               smoothing: float = 0.1, pad: int = 0) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """ctc_weight * CTC + (1 - ctc_weight) * label-smoothed attention CE.

    Returns (joint, ctc, ce). Sequences whose CTC target is infeasible for
    their length are left out of the CTC mean.
    """
    if not 0.0 <= ctc_weight <= 1.0:
        raise ValueError(f"ctc_weight must lie in [0, 1], got {ctc_weight}")
    per_seq = ctc_loss_batch(ctc_logprobs, lengths, ctc_targets)
    finite = torch.isfinite(per_seq)
    ctc = per_seq[finite].mean() if bool(finite.any()) else ctc_logprobs.sum() * 0.0
    ce = label_smoothed_ce(decoder_logits, decoder_targets, smoothing, pad)
    if ctc_weight == 0.0:
        return ce, ctc, ce
    if ctc_weight == 1.0:
        return ctc, ctc, ce
    return ctc_weight * ctc + (1.0 - ctc_weight) * ce, ctc, ce
