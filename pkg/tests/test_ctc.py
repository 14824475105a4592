import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import ctc_brute_force
from vsrssl.train import ctc_loss, ctc_loss_batch
from vsrssl.train.ctc import ctc_feasible, ctc_min_frames


def _logprobs(T, C, seed):
    x = torch.randn(T, C, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)
    return torch.log_softmax(2 * x, dim=-1)


@st.composite
def instances(draw):
    V = draw(st.integers(1, 3))  # tokens 1..V, blank 0, so C <= 4
    T = draw(st.integers(1, 5))
    L = draw(st.integers(0, 3))
    target = draw(st.lists(st.integers(1, V), min_size=L, max_size=L))
    return T, V + 1, target, draw(st.integers(0, 10_000))


@settings(max_examples=60, deadline=None)
@given(instances())
def test_matches_brute_force(inst):
    T, C, target, seed = inst
    lp = _logprobs(T, C, seed)
    ref = ctc_brute_force(lp.numpy(), target)
    got = ctc_loss(lp, target).item()
    if math.isinf(ref):
        assert math.isinf(got) and not ctc_feasible(T, target)
    else:
        assert abs(got - ref) < 1e-8


def test_single_path():
    lp = torch.log(torch.tensor([[0.1, 0.7, 0.2]], dtype=torch.float64))
    assert ctc_loss(lp, [1]).item() == pytest.approx(-math.log(0.7), abs=1e-12)


def test_t4_v3_l2_case():
    lp = _logprobs(4, 4, 7)
    assert abs(ctc_loss(lp, [2, 3]).item() - ctc_brute_force(lp.numpy(), [2, 3])) < 1e-8


def test_repeat_needs_a_blank():
    lp = _logprobs(2, 3, 0)
    assert ctc_min_frames([1, 1]) == 3
    assert math.isinf(ctc_loss(lp, [1, 1]).item())
    assert math.isfinite(ctc_loss(_logprobs(3, 3, 0), [1, 1]).item())


def test_batch_respects_lengths():
    a, b = _logprobs(5, 4, 1), _logprobs(3, 4, 2)
    padded = torch.stack([a, torch.cat([b, _logprobs(2, 4, 3)])])
    out = ctc_loss_batch(padded, [5, 3], [[1, 2], [3]])
    assert out[0].item() == pytest.approx(ctc_loss(a, [1, 2]).item(), abs=1e-12)
    assert out[1].item() == pytest.approx(ctc_loss(b, [3]).item(), abs=1e-12)


def test_gradient_is_finite_for_feasible_targets():
    lp = _logprobs(6, 4, 5).requires_grad_(True)
    ctc_loss(lp, [1, 1, 2]).backward()
    assert torch.isfinite(lp.grad).all()


def test_rejects_unbatched_shape():
    with pytest.raises(ValueError):
        ctc_loss(torch.zeros(1, 3, 4), [1])
