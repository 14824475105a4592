import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from vsrssl.substrate import ParameterStore, grad_check
from vsrssl.train import joint_loss, l1_pretext_loss, label_smoothed_ce
from vsrssl.train.losses import soft_cross_entropy


def test_l1_zero_when_equal():
    x = torch.randn(4, 3)
    assert l1_pretext_loss(x, x).item() == 0


def test_l1_constant_offset():
    x = torch.randn(5, 2, dtype=torch.float64)
    assert l1_pretext_loss(x + 0.5, x).item() == pytest.approx(0.5)


def test_l1_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        l1_pretext_loss(torch.zeros(3, 2), torch.zeros(2, 3))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 10_000))
def test_l1_subgradient(T, D, seed):
    g = torch.Generator().manual_seed(seed)
    target = torch.randn(T, D, generator=g, dtype=torch.float64)
    pred = target + torch.randn(T, D, generator=g, dtype=torch.float64).sign() * (0.1 + torch.rand(T, D, generator=g, dtype=torch.float64))
    pred.requires_grad_(True)
    l1_pretext_loss(pred, target).backward()
    assert torch.equal(pred.grad, (pred - target).sign().detach() / (T * D))
    # away from ties the finite-difference oracle agrees
    params = ParameterStore({"p": pred.detach()})
    assert grad_check(lambda _, p: l1_pretext_loss(p["p"], target), None, params) < 1e-6


def test_smoothing_zero_is_plain_cross_entropy():
    logits = torch.randn(2, 5, 7, dtype=torch.float64)
    targets = torch.randint(1, 7, (2, 5))
    ref = torch.nn.functional.cross_entropy(logits.reshape(-1, 7), targets.reshape(-1))
    assert label_smoothed_ce(logits, targets, 0.0).item() == pytest.approx(ref.item(), abs=1e-12)


def test_padding_is_ignored():
    logits = torch.randn(1, 4, 6, dtype=torch.float64)
    targets = torch.tensor([[3, 2, 0, 0]])
    changed = logits.clone()
    changed[0, 2:] = torch.randn(2, 6, dtype=torch.float64)
    assert label_smoothed_ce(logits, targets).item() == label_smoothed_ce(changed, targets).item()


def test_smoothing_adds_uniform_term():
    logits = torch.randn(1, 3, 5, dtype=torch.float64)
    targets = torch.tensor([[1, 2, 4]])
    logp = torch.log_softmax(logits, -1)
    nll = -logp.gather(-1, targets[..., None]).mean()
    uni = -logp.mean()
    assert label_smoothed_ce(logits, targets, 0.2).item() == pytest.approx((0.8 * nll + 0.2 * uni).item())


def test_soft_cross_entropy_with_one_hot():
    logits = torch.randn(3, 4, dtype=torch.float64)
    labels = torch.tensor([0, 3, 1])
    ref = torch.nn.functional.cross_entropy(logits, labels)
    got = soft_cross_entropy(logits, torch.nn.functional.one_hot(labels, 4).double())
    assert got.item() == pytest.approx(ref.item())


def _joint_inputs(seed):
    g = torch.Generator().manual_seed(seed)
    ctc_lp = torch.log_softmax(torch.randn(2, 6, 4, generator=g, dtype=torch.float64), -1)
    logits = torch.randn(2, 4, 7, generator=g, dtype=torch.float64)
    targets = torch.tensor([[1, 2, 6, 0], [3, 6, 0, 0]])
    return ctc_lp, torch.tensor([6, 5]), [[1, 2], [3]], logits, targets


def test_joint_endpoints():
    args = _joint_inputs(0)
    j0, ctc, ce = joint_loss(*args, ctc_weight=0.0)
    j1, _, _ = joint_loss(*args, ctc_weight=1.0)
    assert j0.item() == ce.item() and j1.item() == ctc.item()


@given(st.floats(0, 1), st.integers(0, 1000))
def test_joint_is_convex_combination(w, seed):
    j, ctc, ce = joint_loss(*_joint_inputs(seed), ctc_weight=w)
    lo, hi = sorted((ctc.item(), ce.item()))
    assert lo - 1e-12 <= j.item() <= hi + 1e-12


def test_joint_weight_outside_unit_interval_rejected():
    with pytest.raises(ValueError):
        joint_loss(*_joint_inputs(0), ctc_weight=1.5)
