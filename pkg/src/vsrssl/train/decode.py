"""Joint CTC/attention beam search.

A hypothesis score is (1 - w) * sum of attention log-probs + w * CTC prefix
log-probability (+ optional LM term). Ended hypotheses are ranked by that
score divided by their length including eos.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from ..models.decoder import TokenLayout

StepFn = Callable[[torch.Tensor], torch.Tensor]  # (N, L) prefixes -> (N, vocab) log-probs


class CTCPrefixScorer:
    """Prefix probabilities under a CTC posterior, extended one label at a time.

    State per prefix: log r_n[t], log r_b[t] (prefix emitted by frame t, ending
    in a label / in blank) and the prefix's last label.
    """

    def __init__(self, logprobs: np.ndarray, blank: int = 0):
        self.lp = np.asarray(logprobs, dtype=np.float64)
        self.T = self.lp.shape[0]
        self.blank = blank

    def initial_state(self):
        r_n = np.full(self.T, -np.inf)
        r_b = np.cumsum(self.lp[:, self.blank])
        return r_n, r_b, None

    def full_score(self, state) -> float:
        r_n, r_b, _ = state
        return float(np.logaddexp(r_n[-1], r_b[-1]))

    def extend(self, states: Sequence, labels: np.ndarray):
        """Score every label in ``labels`` after every prefix in ``states``.

        Returns (psi (N, K), r_n (N, K, T), r_b (N, K, T)).
        """
        N, K, T = len(states), len(labels), self.T
        g_n = np.stack([s[0] for s in states])[:, None, :]  # N,1,T
        g_b = np.stack([s[1] for s in states])[:, None, :]
        last = np.array([-1 if s[2] is None else s[2] for s in states])[:, None]
        empty = np.array([s[2] is None for s in states])[:, None]
        x = self.lp[:, labels].T[None, :, :]  # 1,K,T
        same = last == labels[None, :]  # N,K
        # phi[t]: prob. mass of the prefix at t from which the new label may start
        phi = np.where(same[:, :, None], g_b, np.logaddexp(g_b, g_n))
        r_n = np.full((N, K, T), -np.inf)
        r_b = np.full((N, K, T), -np.inf)
        r_n[:, :, 0] = np.where(empty, x[:, :, 0], -np.inf)
        psi = r_n[:, :, 0].copy()
        blank = self.lp[:, self.blank]
        for t in range(1, T):
            r_n[:, :, t] = np.logaddexp(r_n[:, :, t - 1], phi[:, :, t - 1]) + x[:, :, t]
            r_b[:, :, t] = np.logaddexp(r_b[:, :, t - 1], r_n[:, :, t - 1]) + blank[t]
            psi = np.logaddexp(psi, phi[:, :, t - 1] + x[:, :, t])
        return psi, r_n, r_b


@dataclass
class Hypothesis:
    ids: tuple[int, ...]  # decoder ids, without sos/eos
    att: float = 0.0
    ctc: float = 0.0
    lm: float = 0.0
    ctc_state: tuple | None = field(default=None, repr=False)
    score: float = 0.0  # raw joint score
    final: float = float("-inf")  # length-normalised, set once ended


def _joint(att, ctc, lm, ctc_weight, lm_weight):
    return (1.0 - ctc_weight) * att + ctc_weight * ctc + lm_weight * lm


def beam_search(step_fn: StepFn, layout: TokenLayout, beam: int, max_len: int,
                ctc_logprobs: np.ndarray | None = None, ctc_weight: float = 0.0,
                lm_scorer: StepFn | None = None, lm_weight: float = 0.0,
                end_detect: bool = False) -> Hypothesis:
    """Best ended hypothesis. Hypotheses still alive at ``max_len`` tokens are closed with eos."""
    if beam < 1:
        raise ValueError(f"beam must be >= 1, got {beam}")
    if ctc_weight > 0 and ctc_logprobs is None:
        raise ValueError("ctc_weight > 0 needs CTC log-probabilities")
    use_ctc = ctc_weight > 0
    scorer = CTCPrefixScorer(ctc_logprobs, layout.blank) if use_ctc else None
    labels = np.arange(1, layout.n_tokens + 1)  # CTC ids coincide with decoder token ids
    eos = layout.eos

    live = [Hypothesis((), ctc_state=scorer.initial_state() if use_ctc else None)]
    ended: list[Hypothesis] = []
    for i in range(max_len + 1):
        prefixes = torch.tensor([[layout.sos, *h.ids] for h in live], dtype=torch.long)
        att = step_fn(prefixes).detach().double().numpy()
        lm = lm_scorer(prefixes).detach().double().numpy() if lm_scorer is not None else np.zeros_like(att)
        if use_ctc:
            psi, r_n, r_b = scorer.extend([h.ctc_state for h in live], labels)
        cands = []  # (score, order, hyp)
        for n, h in enumerate(live):
            ctc_end = scorer.full_score(h.ctc_state) if use_ctc else 0.0
            a, l_ = h.att + att[n, eos], h.lm + lm[n, eos]
            cands.append(Hypothesis(h.ids + (eos,), a, ctc_end, l_, None, _joint(a, ctc_end, l_, ctc_weight, lm_weight)))
            if i == max_len:
                continue
            for k, tok in enumerate(labels):
                tok = int(tok)
                a, l_ = h.att + att[n, tok], h.lm + lm[n, tok]
                c = float(psi[n, k]) if use_ctc else 0.0
                st = (r_n[n, k], r_b[n, k], tok) if use_ctc else None
                cands.append(Hypothesis(h.ids + (tok,), a, c, l_, st, _joint(a, c, l_, ctc_weight, lm_weight)))
        order = np.argsort(-np.array([c.score for c in cands]), kind="stable")
        live = []
        for j in order[:beam]:
            c = cands[j]
            if c.ids[-1] == eos:
                c.ids = c.ids[:-1]
                c.final = c.score / (len(c.ids) + 1)
                ended.append(c)
            else:
                live.append(c)
        if not live or (end_detect and _ended_stalled(ended, i)):
            break
    return max(ended, key=lambda h: h.final)


def _ended_stalled(ended: list[Hypothesis], i: int, m: int = 3, margin: float = 10.0) -> bool:
    """True when each of the last ``m`` lengths produced only ended hyps far below the best."""
    if not ended or i < m:
        return False
    best = max(h.score for h in ended)
    count = 0
    for d in range(m):
        at_len = [h.score for h in ended if len(h.ids) == i - d]
        if at_len and max(at_len) < best - margin:
            count += 1
    return count == m


def greedy_decode(step_fn: StepFn, layout: TokenLayout, max_len: int) -> tuple[int, ...]:
    """Teacher-forced argmax rollout over tokens and eos."""
    allowed = list(range(1, layout.n_tokens + 1)) + [layout.eos]
    ids: list[int] = []
    while len(ids) < max_len:
        logp = step_fn(torch.tensor([[layout.sos, *ids]], dtype=torch.long))[0].detach().double().numpy()
        tok = allowed[int(np.argmax(logp[allowed]))]
        if tok == layout.eos:
            break
        ids.append(tok)
    return tuple(ids)


def model_step_fn(model, memory: torch.Tensor) -> StepFn:
    """Attention log-probs of the next token for a batch of prefixes over one utterance."""

    def step(prefixes: torch.Tensor) -> torch.Tensor:
        mem = memory.expand(prefixes.shape[0], -1, -1)
        with torch.no_grad():
            logits = model.decoder(prefixes, mem)[:, -1]
        return torch.log_softmax(logits.double(), dim=-1)

    return step


def beam_search_decode(model, clip: torch.Tensor, beam: int = 20, ctc_weight: float = 0.1,
                       lm_scorer: StepFn | None = None, lm_weight: float = 0.0,
                       max_len: int | None = None, end_detect: bool = True) -> list[int]:
    """Decode one (T, H, W) clip with a SentenceModel; returns 0-based tokens."""
    if clip.shape[0] < 1:
        raise ValueError("empty clip")
    model.eval()
    with torch.no_grad():
        memory = model.encode(clip[None])
        ctc_lp = model.ctc_logprobs(memory)[0].double().numpy()
    hyp = beam_search(model_step_fn(model, memory), model.layout, beam, max_len or 2 * clip.shape[0],
                      ctc_lp, ctc_weight, lm_scorer, lm_weight, end_detect)
    return model.layout.decode(hyp.ids)
