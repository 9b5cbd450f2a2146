"""Deduplicated green counting and the one-sided exact binomial test."""
from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Sequence

from .watermark import NGramRecord, WatermarkParams, _as_fraction


class InsufficientTokens(ValueError):
    """The token sequence is too short to contain a single (h+1)-gram."""


class Verdict(str, enum.Enum):
    WATERMARKED = "watermarked"
    NOT_WATERMARKED = "not-watermarked"
    UNVERIFIED = "unverified"


def dedup_ngrams(tokens: Sequence[int], h: int) -> list[NGramRecord]:
    """Unique (h+1)-grams in order of first occurrence."""
    if len(tokens) < h + 1:
        raise InsufficientTokens(f"need at least {h + 1} tokens for h={h}, got {len(tokens)}")
    seen = set()
    out = []
    for i in range(h, len(tokens)):
        rec = NGramRecord.build(tokens[i - h:i], tokens[i])
        if rec.encoded not in seen:
            seen.add(rec.encoded)
            out.append(rec)
    return out


# -- exact binomial tail ---------------------------------------------------------

_SMALL_N = 64
_CF_EPS = 1e-16
_CF_TINY = 1e-300
_CF_MAX_ITER = 100_000


def _log_pmf(i: int, n: int, log_p: float, log_q: float) -> float:
    return math.log(math.comb(n, i)) + i * log_p + (n - i) * log_q


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for I_x(a, b) (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def _log_upper_tail(g: int, n: int, p: float) -> float:
    """log Pr(X >= g) for 1 <= g <= n, evaluated where the tail is the small side."""
    # I_p(g, n-g+1) = pmf(g) * (1-p) * CF: the usual x^a (1-x)^b / (a B(a,b))
    # prefactor is exactly C(n,g) p^g (1-p)^(n-g+1).
    log_front = _log_pmf(g, n, math.log(p), math.log1p(-p)) + math.log1p(-p)
    return log_front + math.log(_betacf(g, n - g + 1, p))


def binom_log_sf(g: int, n: int, gamma) -> float:
    """Natural log of ``Pr(X >= g)`` for ``X ~ Binomial(n, gamma)``."""
    if n < 1 or not 0 <= g <= n:
        raise ValueError(f"need n >= 1 and 0 <= g <= n, got g={g}, n={n}")
    gamma = float(_as_fraction(gamma)) if not isinstance(gamma, float) else gamma
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    if g == 0:
        return 0.0
    log_p, log_q = math.log(gamma), math.log1p(-gamma)
    if n < _SMALL_N:
        terms = [_log_pmf(i, n, log_p, log_q) for i in range(g, n + 1)]
        top = max(terms)
        # rounding can push a near-complete sum a hair above 1
        return min(0.0, top + math.log(math.fsum(math.exp(t - top) for t in terms)))
    a, b = g, n - g + 1
    if gamma < (a + 1.0) / (a + b + 2.0):
        return min(0.0, _log_upper_tail(g, n, gamma))
    # Pr(X >= g) = 1 - Pr(X <= g-1) = 1 - Pr(n - X >= n - g + 1), with n - X ~ Bin(n, 1-gamma)
    lower = math.exp(_log_upper_tail(n - g + 1, n, 1.0 - gamma))
    return math.log1p(-lower)


def binom_sf_exact(g: int, n: int, gamma) -> float:
    """One-sided p-value ``Pr(X >= g | H0) = I_gamma(g, n - g + 1)``."""
    if g == 0:
        if n < 1:
            raise ValueError("n must be at least 1")
        return 1.0
    return min(1.0, math.exp(binom_log_sf(g, n, gamma)))


def attained_size(n: int, gamma, alpha: float) -> float:
    """Largest achievable Pr(p-value < alpha) for the exact test at sample size ``n``."""
    best = 0.0
    g = n
    while g >= 1:
        p = binom_sf_exact(g, n, gamma)
        if p >= alpha:
            break
        best = p
        g -= 1
    return best


# -- reports -----------------------------------------------------------------

@dataclass
class DetectionReport:
    n_unique: int
    g_green: int | None
    p_value: float | None
    params: WatermarkParams
    verified: bool
    alpha: float
    transcript_hash: str = ""
    error: str | None = None
    transcript: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.verified:
            if self.g_green is None or not 0 <= self.g_green <= self.n_unique:
                raise ValueError("green count out of range")
            if self.p_value is None or not 0.0 <= self.p_value <= 1.0:
                raise ValueError("p-value out of range")

    @property
    def verdict(self) -> Verdict:
        return decide(self.p_value, self.verified, self.alpha)

    def to_json(self) -> str:
        d = asdict(self)
        d["params"] = self.params.to_dict()
        d["verdict"] = self.verdict.value
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DetectionReport":
        d = json.loads(text)
        d.pop("verdict", None)
        d["params"] = WatermarkParams.from_dict(d["params"])
        return cls(**d)


def decide(p_value: float | None, verified: bool, alpha: float) -> Verdict:
    if not verified or p_value is None:
        return Verdict.UNVERIFIED
    return Verdict.WATERMARKED if p_value < alpha else Verdict.NOT_WATERMARKED


def score(verdicts: Sequence[bool], params: WatermarkParams, alpha: float, **extra) -> DetectionReport:
    """Build a verified report from per-n-gram green flags."""
    n = len(verdicts)
    if n == 0:
        raise InsufficientTokens("no n-grams to test")
    g = sum(bool(v) for v in verdicts)
    return DetectionReport(n_unique=n, g_green=g, p_value=binom_sf_exact(g, n, params.gamma),
                           params=params, verified=True, alpha=alpha, **extra)


def detect_local(tokens: Sequence[int], sk: int, params: WatermarkParams, alpha: float) -> DetectionReport:
    """Key-holder detection without the oblivious protocol."""
    from .watermark import color_verdict
    from . import voprf

    records = dedup_ngrams(tokens, params.h)
    greens = [color_verdict(voprf.evaluate(sk, r.encoded), params.gamma, params.int_width).is_green
              for r in records]
    return score(greens, params, alpha)
