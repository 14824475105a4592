"""Independent brute-force references used across the test suite."""
import itertools
import math
from functools import lru_cache

import numpy as np
import torch

from vsrssl.models import TokenLayout


@lru_cache(maxsize=None)
def _alignments(T: int, C: int, blank: int):
    """Every frame labelling of length T, and the label sequence each collapses to."""
    paths = np.array(list(itertools.product(range(C), repeat=T)), dtype=np.int64).reshape(-1, T)
    groups: dict[tuple, list[int]] = {}
    for n, path in enumerate(paths.tolist()):
        out = tuple(k for i, k in enumerate(path) if k != blank and (i == 0 or path[i - 1] != k))
        groups.setdefault(out, []).append(n)
    return paths, {k: np.array(v) for k, v in groups.items()}


def ctc_brute_force(logprobs: np.ndarray, target, blank: int = 0) -> float:
    """-log of the summed probability of every frame labelling that collapses to ``target``."""
    T, C = logprobs.shape
    paths, groups = _alignments(T, C, blank)
    members = groups.get(tuple(target))
    if members is None:
        return math.inf
    scores = logprobs[np.arange(T)[None, :], paths[members]].sum(axis=1)
    return -float(np.logaddexp.reduce(scores))


def levenshtein(a, b) -> int:
    """Top-down memoised edit distance with unit costs."""
    a, b = tuple(a), tuple(b)

    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0 or j == 0:
            return i + j
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))


def table_step_fn(seed: int, layout: TokenLayout):
    """A decoder stand-in: fixed random next-token log-probs for every prefix.

    Returns (batched step function, per-prefix lookup).
    """
    cache = {}

    def logp(prefix: tuple) -> torch.Tensor:
        if prefix not in cache:
            g = torch.Generator().manual_seed(hash((seed, prefix)) % (2 ** 31))
            cache[prefix] = torch.log_softmax(2 * torch.randn(layout.decoder_size, generator=g, dtype=torch.float64), 0)
        return cache[prefix]

    return (lambda prefixes: torch.stack([logp(tuple(p.tolist())) for p in prefixes])), logp


def exhaustive_decode(logp, layout: TokenLayout, max_len: int, ctc_logprobs=None, ctc_weight: float = 0.0):
    """Argmax over every token sequence up to ``max_len`` of the length-normalised joint score."""
    best, best_score = None, -math.inf
    for n in range(max_len + 1):
        for seq in itertools.product(range(1, layout.n_tokens + 1), repeat=n):
            prefix, att = (layout.sos,), 0.0
            for tok in seq + (layout.eos,):
                att += float(logp(prefix)[tok])
                prefix += (tok,)
            ctc = -ctc_brute_force(ctc_logprobs, seq) if ctc_weight else 0.0
            score = ((1 - ctc_weight) * att + ctc_weight * ctc) / (n + 1)
            if score > best_score:
                best, best_score = seq, score
    return best
