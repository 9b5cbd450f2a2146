"""Watermarked sampling that only colors the tokens it has to.

All samplers take an ``is_green(token) -> bool`` callable already bound to the
current context, so the same code serves insertion (PRF with the secret key)
and the attack lab (cache lookups).
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

ColorFn = Callable[[int], bool]

MAX_TRIALS = 10**6


class SamplingError(RuntimeError):
    pass


@dataclass
class LogitVector:
    scores: np.ndarray
    temperature: float = 1.0
    _cdf: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        if self.scores.ndim != 1 or self.scores.size == 0:
            raise ValueError("logits must be a nonempty 1-d array")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("logits must be finite")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")

    def __len__(self):
        return self.scores.size

    def probs(self) -> np.ndarray:
        return softmax(self.scores / self.temperature)

    def cdf(self) -> np.ndarray:
        if self._cdf is None:
            self._cdf = np.cumsum(self.probs())
        return self._cdf


def softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - np.max(x))
    return z / z.sum()


def _as_logits(logits) -> LogitVector:
    return logits if isinstance(logits, LogitVector) else LogitVector(logits)


def sample_multinomial_rejection(
    logits, delta: float, is_green: ColorFn, rng: np.random.Generator, max_trials: int = MAX_TRIALS
) -> tuple[int, int]:
    """Draw from ``q(t) ∝ p(t) exp(delta * [t green])`` using ``p`` as proposal.

    Green proposals are always accepted, red ones with probability
    ``exp(-delta / T)``.  Returns ``(token, trials)``.
    """
    lv = _as_logits(logits)
    cdf = lv.cdf()
    accept_red = math.exp(-delta / lv.temperature)
    last = cdf.size - 1
    for trial in range(1, max_trials + 1):
        t = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), last)
        if is_green(t) or rng.random() < accept_red:
            return t, trial
    raise SamplingError(f"no token accepted in {max_trials} trials; check delta and the color oracle")


def expected_trials(delta: float, green_mass: float) -> float:
    return math.exp(delta) / (1.0 + (math.exp(delta) - 1.0) * green_mass)


# -- top-k ---------------------------------------------------------------------

def tie_break_order(scores) -> np.ndarray:
    """Indices sorted by descending score, ties broken by ascending token id."""
    scores = np.asarray(scores, dtype=float)
    return np.lexsort((np.arange(scores.size), -scores))


@dataclass
class SieveResult:
    tokens: np.ndarray          # ordered by (biased logit desc, id asc)
    biased: np.ndarray
    calls: int
    n_candidates: int

    def pairs(self) -> list[tuple[int, float]]:
        return [(int(t), float(b)) for t, b in zip(self.tokens, self.biased)]


def select_topk_watermarked(logits, k: int, delta: float, is_green: ColorFn) -> SieveResult:
    """Exact top-k of the biased logits, coloring as few tokens as possible.

    Only tokens with ``l + delta >= l_kth`` can reach the biased top-k.  They
    are visited in descending original logit; once the worst of the current
    best-k beats the best possible biased score of the next candidate, the
    scan stops.
    """
    scores = _as_logits(logits).scores
    n = scores.size
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    l_kth = np.partition(scores, n - k)[n - k]
    cand = np.flatnonzero(scores + delta >= l_kth)
    cand = cand[tie_break_order(scores[cand])]

    # min-heap keyed (biased, -id): the root is the weakest of the current best k
    heap: list[tuple[float, int]] = []
    calls = 0
    for pos, j in enumerate(cand):
        j = int(j)
        if delta > 0:
            calls += 1
            b = scores[j] + delta if is_green(j) else scores[j]
        else:
            b = scores[j]
        key = (float(b), -j)
        if len(heap) < k:
            heapq.heappush(heap, key)
        elif key > heap[0]:
            heapq.heapreplace(heap, key)
        if len(heap) == k and pos + 1 < cand.size:
            nxt = int(cand[pos + 1])
            if heap[0] > (float(scores[nxt] + delta), -nxt):
                break

    best = sorted(heap, key=lambda kv: (-kv[0], -kv[1]))
    return SieveResult(
        tokens=np.array([-kv[1] for kv in best], dtype=np.int64),
        biased=np.array([kv[0] for kv in best], dtype=float),
        calls=calls,
        n_candidates=int(cand.size),
    )


def nucleus(probs: np.ndarray, top_p: float) -> int:
    """Number of leading entries (already sorted descending) kept by top-p."""
    if not 0 < top_p <= 1:
        raise ValueError("top_p must be in (0, 1]")
    if top_p >= 1:
        return probs.size
    before = np.concatenate(([0.0], np.cumsum(probs)[:-1]))
    return max(1, int(np.count_nonzero(before < top_p)))


def sample_topk(
    logits,
    k: int,
    delta: float,
    is_green: ColorFn,
    rng: np.random.Generator,
    top_p: float = 1.0,
    temperature: float = 1.0,
) -> tuple[int, int]:
    """Bias -> top-k -> optional top-p -> multinomial draw. Returns ``(token, calls)``."""
    sieve = select_topk_watermarked(logits, k, delta, is_green)
    probs = softmax(sieve.biased / temperature)
    keep = nucleus(probs, top_p)
    probs = probs[:keep] / probs[:keep].sum()
    idx = int(rng.choice(keep, p=probs)) if keep > 1 else 0
    return int(sieve.tokens[idx]), sieve.calls
