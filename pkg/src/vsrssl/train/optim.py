"""Adam / AdamW with bias correction, and the Noam warm-up schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch

from ..substrate import ParameterStore


class NonFiniteGradient(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient in parameter {name!r}")
        self.name = name


def noam_lr(step: int, warmup: int, d_model: int, scale: float = 1.0) -> float:
    """scale * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)."""
    if step < 1:
        raise ValueError("noam_lr is defined for step >= 1")
    return scale * d_model ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


def noam_scale_for_peak(peak_lr: float, warmup: int, d_model: int) -> float:
    """Scale that makes the schedule peak (at step == warmup) equal ``peak_lr``."""
    return peak_lr * math.sqrt(d_model) * math.sqrt(warmup)


@dataclass
class OptimState:
    mode: str = "adam"  # or "adamw"
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    weight_decay: float = 0.0
    t: int = 0
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("adam", "adamw"):
            raise ValueError(f"mode must be adam or adamw, got {self.mode!r}")


def _update(state: OptimState, name: str, p: torch.Tensor, g: torch.Tensor, lr: float) -> None:
    """In-place update of ``p``; the state's step counter must already be advanced."""
    if not bool(torch.isfinite(g).all()):
        raise NonFiniteGradient(name)
    if name not in state.m:
        state.m[name] = torch.zeros_like(p)
        state.v[name] = torch.zeros_like(p)
    m, v = state.m[name], state.v[name]
    m.mul_(state.beta1).add_(g, alpha=1 - state.beta1)
    v.mul_(state.beta2).addcmul_(g, g, value=1 - state.beta2)
    if state.mode == "adamw" and state.weight_decay:
        p.sub_(lr * state.weight_decay * p)
    m_hat = m / (1 - state.beta1 ** state.t)
    v_hat = v / (1 - state.beta2 ** state.t)
    p.sub_(lr * m_hat / (v_hat.sqrt() + state.eps))


def optimizer_step(state: OptimState, params: ParameterStore, grads: ParameterStore,
                   lr: float) -> tuple[ParameterStore, OptimState]:
    """Functional form: returns updated copies of ``params``; ``state`` is advanced in place."""
    new = params.clone()
    state.t += 1
    for name, p in new.items():
        if name not in grads:
            raise KeyError(f"no gradient for parameter {name!r}")
        if tuple(grads[name].shape) != tuple(p.shape):
            raise ValueError(f"{name}: gradient shape {tuple(grads[name].shape)} != {tuple(p.shape)}")
        _update(state, name, p, grads[name], lr)
    return new, state


class Optimizer:
    """In-place optimizer over ``module.named_parameters()`` that require grad."""

    def __init__(self, module: torch.nn.Module, state: OptimState):
        self.params = [(n.replace(".", "/"), p) for n, p in module.named_parameters() if p.requires_grad]
        self.state = state

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None

    @torch.no_grad()
    def step(self, lr: float):
        self.state.t += 1
        for name, p in self.params:
            g = p.grad if p.grad is not None else torch.zeros_like(p)
            _update(self.state, name, p, g, lr)
