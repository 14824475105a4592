import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import exhaustive_decode, table_step_fn
from vsrssl.models import TokenLayout
from vsrssl.train import ctc_loss
from vsrssl.train.decode import CTCPrefixScorer, beam_search, greedy_decode

LAYOUT = TokenLayout(3)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 100_000), st.sampled_from([0.0, 0.3]))
def test_exhaustive_beam_matches_enumeration(seed, w):
    step, logp = table_step_fn(seed, LAYOUT)
    ctc_lp = None
    if w:
        g = torch.Generator().manual_seed(seed)
        ctc_lp = torch.log_softmax(torch.randn(6, LAYOUT.ctc_size, generator=g, dtype=torch.float64), -1).numpy()
    hyp = beam_search(step, LAYOUT, beam=64, max_len=3, ctc_logprobs=ctc_lp, ctc_weight=w)
    assert hyp.ids == exhaustive_decode(logp, LAYOUT, 3, ctc_lp, w)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 6))
def test_beam_one_is_greedy(seed, max_len):
    step, _ = table_step_fn(seed, LAYOUT)
    assert beam_search(step, LAYOUT, beam=1, max_len=max_len).ids == greedy_decode(step, LAYOUT, max_len)


def test_one_hot_decoder_reproduces_forced_sequence():
    forced = [2, 3, 1, 2]

    def step(prefixes):
        out = torch.full((prefixes.shape[0], LAYOUT.decoder_size), -1e9, dtype=torch.float64)
        for n, p in enumerate(prefixes):
            i = p.shape[0] - 1
            out[n, forced[i] if i < len(forced) else LAYOUT.eos] = 0.0
        return out

    assert list(beam_search(step, LAYOUT, beam=4, max_len=10).ids) == forced


@pytest.mark.parametrize("beam", [0, -3])
def test_beam_below_one_rejected(beam):
    step, _ = table_step_fn(0, LAYOUT)
    with pytest.raises(ValueError):
        beam_search(step, LAYOUT, beam=beam, max_len=3)


def test_ctc_weight_needs_posteriors():
    step, _ = table_step_fn(0, LAYOUT)
    with pytest.raises(ValueError):
        beam_search(step, LAYOUT, beam=2, max_len=3, ctc_weight=0.5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.lists(st.integers(1, 3), max_size=3))
def test_prefix_scorer_full_score_is_ctc_probability(seed, seq):
    g = torch.Generator().manual_seed(seed)
    lp = torch.log_softmax(torch.randn(6, 4, generator=g, dtype=torch.float64), -1)
    scorer = CTCPrefixScorer(lp.numpy())
    state = scorer.initial_state()
    for tok in seq:
        _, r_n, r_b = scorer.extend([state], np.array([tok]))
        state = (r_n[0, 0], r_b[0, 0], tok)
    assert scorer.full_score(state) == pytest.approx(-ctc_loss(lp, seq).item(), abs=1e-9)


def test_lm_slot_changes_ranking():
    step, _ = table_step_fn(1, LAYOUT)
    plain = beam_search(step, LAYOUT, beam=8, max_len=3).ids

    def lm(prefixes):
        out = torch.full((prefixes.shape[0], LAYOUT.decoder_size), -5.0, dtype=torch.float64)
        out[:, 1] = 0.0
        out[:, LAYOUT.eos] = -0.5 * (prefixes.shape[1] < 3)
        return out

    biased = beam_search(step, LAYOUT, beam=8, max_len=3, lm_scorer=lm, lm_weight=50.0).ids
    assert biased == (1, 1)
    assert plain != biased
