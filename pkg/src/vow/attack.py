"""Learning-attack economics and the cache-replay forgery experiment."""
from __future__ import annotations

import math
import struct
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import stats

from .detector import DetectionReport, binom_sf_exact, dedup_ngrams
from .model import SyntheticModel, generate
from .watermark import NGRAM_MAGIC, WatermarkParams, _as_fraction, encode_context

BatchOracle = Callable[[Sequence[bytes]], list[bool]]


# -- cost model ----------------------------------------------------------------

def z_alpha(alpha: float) -> float:
    """Upper-tail standard normal quantile: ``Pr(Z > z) = alpha``."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    return float(stats.norm.isf(alpha))


def required_hit_rate(L: int, alpha: float, gamma) -> float:
    """Cache hit rate needed for a length-``L`` forgery to clear the normal-approximation threshold."""
    if L < 1:
        raise ValueError("L must be at least 1")
    g = float(_as_fraction(gamma))
    return z_alpha(alpha) * math.sqrt(g / (L * (1.0 - g)))


def p_required(L: int, alpha: float, gamma) -> float:
    """Green fraction at the normal-approximation threshold."""
    g = float(_as_fraction(gamma))
    return g + z_alpha(alpha) * math.sqrt(g * (1.0 - g) / L)


def p_required_exact(L: int, alpha: float, gamma) -> float:
    """Smallest green fraction ``g/L`` whose exact binomial p-value is below ``alpha``."""
    gamma = _as_fraction(gamma)
    lo, hi = 0, L + 1
    # p-value is decreasing in g; find the first g with p < alpha
    while lo < hi:
        mid = (lo + hi) // 2
        if binom_sf_exact(mid, L, gamma) < alpha:
            hi = mid
        else:
            lo = mid + 1
    return lo / L if lo <= L else math.inf


def p_attack(p_hit: float, gamma) -> float:
    g = float(_as_fraction(gamma))
    return p_hit + (1.0 - p_hit) * g


def harmonic_exact(n: int, s: float) -> float:
    """Generalized harmonic number ``sum_{i=1}^n i^-s`` by direct summation."""
    i = np.arange(1, n + 1, dtype=float)
    return math.fsum(i ** -s)


def harmonic_approx(n: float, s: float) -> float:
    return (n ** (1.0 - s) - 1.0) / (1.0 - s)


@dataclass(frozen=True)
class ZipfCacheSize:
    approx: float
    simplified: float


def zipf_cache_size(p_hit: float, s: float = 0.4, M: float = 1e12) -> ZipfCacheSize:
    """Most-frequent n-grams an attacker must hold to reach hit rate ``p_hit``.

    Solves ``H_{m,s} / H_{M,s} = p_hit`` with the integral approximation of
    the harmonic numbers.
    """
    if not 0 < p_hit <= 1:
        raise ValueError("p_hit must lie in (0, 1]")
    if not 0 < s < 1:
        raise ValueError("s must lie in (0, 1)")
    if M < 1:
        raise ValueError("M must be at least 1")
    e = 1.0 - s
    approx = (p_hit * (M**e - 1.0) + 1.0) ** (1.0 / e)
    return ZipfCacheSize(approx=min(approx, float(M)), simplified=p_hit ** (1.0 / e) * M)


def storage_bound(m_entries: float, bytes_per_entry: float = 20) -> float:
    if m_entries < 0 or bytes_per_entry < 0:
        raise ValueError("sizes must be non-negative")
    return m_entries * bytes_per_entry


def format_bytes(n: float) -> str:
    for unit in ("B", "KB", "MB", "GB", "TB", "PB"):
        if abs(n) < 1000 or unit == "PB":
            return f"{n:.3g} {unit}" if unit != "B" else f"{n:.0f} B"
        n /= 1000.0
    raise AssertionError  # pragma: no cover


@dataclass(frozen=True)
class AttackCostParams:
    L: int = 300
    alpha: float = 1e-5
    gamma: Fraction = Fraction(1, 2)
    s: float = 0.4
    M: float = 1e12
    bytes_per_entry: float = 20

    def __post_init__(self):
        object.__setattr__(self, "gamma", _as_fraction(self.gamma))
        if not 0 < self.s < 1:
            raise ValueError("s must lie in (0, 1)")
        if self.M < 1:
            raise ValueError("M must be at least 1")
        if self.L < 1 or not 0 < self.alpha < 1:
            raise ValueError("need L >= 1 and 0 < alpha < 1")


@dataclass(frozen=True)
class AttackCost:
    params: AttackCostParams
    z_alpha: float
    p_required: float
    p_required_exact: float
    p_hit: float
    m_zipf: float
    m_zipf_simplified: float
    storage_bytes: float

    def rows(self) -> list[tuple[str, str]]:
        p = self.params
        return [
            ("L", str(p.L)),
            ("alpha", f"{p.alpha:g}"),
            ("gamma", f"{p.gamma.numerator}/{p.gamma.denominator}"),
            ("s", f"{p.s:g}"),
            ("M", f"{p.M:.3g}"),
            ("bytes_per_entry", f"{p.bytes_per_entry:g}"),
            ("z_alpha", f"{self.z_alpha:.4f}"),
            ("p_required", f"{self.p_required:.4f}"),
            ("p_required_exact", f"{self.p_required_exact:.4f}"),
            ("p_hit", f"{100 * self.p_hit:.2f}%"),
            ("m_zipf", f"{self.m_zipf:.3g}"),
            ("m_zipf_simplified", f"{self.m_zipf_simplified:.3g}"),
            ("storage", format_bytes(self.storage_bytes)),
        ]

    def to_text(self) -> str:
        return "".join(f"{k:<18} {v}\n" for k, v in self.rows())


def attack_cost(params: AttackCostParams = AttackCostParams()) -> AttackCost:
    p_hit = required_hit_rate(params.L, params.alpha, params.gamma)
    size = zipf_cache_size(min(p_hit, 1.0), params.s, params.M)
    return AttackCost(
        params=params,
        z_alpha=z_alpha(params.alpha),
        p_required=p_required(params.L, params.alpha, params.gamma),
        p_required_exact=p_required_exact(params.L, params.alpha, params.gamma),
        p_hit=p_hit,
        m_zipf=size.approx,
        m_zipf_simplified=size.simplified,
        storage_bytes=storage_bound(size.approx, params.bytes_per_entry),
    )


# -- green cache -----------------------------------------------------------------

_CACHE_MAGIC = b"VOWCACHE1\n"


@dataclass
class GreenCache:
    """Context encoding -> green token ids observed after that context."""

    h: int
    table: dict[bytes, set[int]] = field(default_factory=dict)
    observed_pairs: int = 0

    def add(self, context: Sequence[int], token: int) -> None:
        self.table.setdefault(encode_context(context), set()).add(int(token))
        self.observed_pairs += 1

    def lookup(self, context: Sequence[int]) -> list[int]:
        return sorted(self.table.get(encode_context(context), ()))

    def __contains__(self, context) -> bool:
        return encode_context(context) in self.table

    @property
    def n_contexts(self) -> int:
        return len(self.table)

    @property
    def unique_pairs(self) -> int:
        return sum(len(v) for v in self.table.values())

    def pairs(self) -> Iterable[tuple[tuple[int, ...], int]]:
        for key in sorted(self.table):
            ctx = _decode_context(key)
            for t in sorted(self.table[key]):
                yield ctx, t

    def save(self, path: Path) -> None:
        """Sorted flat file: per context, key bytes, 4-byte count, 4-byte token ids."""
        with open(path, "wb") as fh:
            fh.write(_CACHE_MAGIC + struct.pack(">IQ", self.h, self.observed_pairs))
            for key in sorted(self.table):
                toks = sorted(self.table[key])
                fh.write(key + struct.pack(f">I{len(toks)}I", len(toks), *toks))

    @classmethod
    def load(cls, path: Path) -> "GreenCache":
        data = Path(path).read_bytes()
        if not data.startswith(_CACHE_MAGIC):
            raise ValueError(f"{path}: not a green cache file")
        pos = len(_CACHE_MAGIC)
        h, observed = struct.unpack_from(">IQ", data, pos)
        pos += 12
        key_len = len(NGRAM_MAGIC) + 2 + 4 * h
        cache = cls(h=h, observed_pairs=observed)
        while pos < len(data):
            key = data[pos:pos + key_len]
            (count,) = struct.unpack_from(">I", data, pos + key_len)
            pos += key_len + 4
            cache.table[key] = set(struct.unpack_from(f">{count}I", data, pos))
            pos += 4 * count
        return cache


def _decode_context(key: bytes) -> tuple[int, ...]:
    h = int.from_bytes(key[7:9], "big")
    return tuple(int.from_bytes(key[9 + 4 * i:13 + 4 * i], "big") for i in range(h))


def build_cache(corpus: Iterable[Sequence[int]], params: WatermarkParams, oracle: BatchOracle) -> GreenCache:
    """Record every green (context, token) pair seen in ``corpus``.

    ``oracle`` maps a batch of n-gram encodings to green flags; it may be a
    key-holder oracle or the detection protocol itself.
    """
    cache = GreenCache(h=params.h)
    for doc in corpus:
        if len(doc) < params.h + 1:
            continue
        grams = [(tuple(doc[i - params.h:i]), int(doc[i])) for i in range(params.h, len(doc))]
        records = dedup_ngrams(doc, params.h)
        flags = dict(zip((r.encoded for r in records), oracle([r.encoded for r in records])))
        for r in records:
            if flags[r.encoded]:
                cache.table.setdefault(encode_context(r.context), set()).add(r.token)
        cache.observed_pairs += sum(
            1 for ctx, t in grams if t in cache.table.get(encode_context(ctx), ()))
    return cache


def watermarked_corpus(
    model: SyntheticModel, is_green, params: WatermarkParams, total_tokens: int, doc_length: int, rng
) -> list[list[int]]:
    """Watermarked documents of ``doc_length`` tokens (last one shorter) totalling ``total_tokens``."""
    docs, remaining = [], total_tokens
    while remaining > 0:
        n = min(doc_length, remaining)
        docs.append(generate(model, is_green, params, n, rng).tokens)
        remaining -= n
    return docs


def hit_rate(cache: GreenCache, tokens: Sequence[int]) -> float:
    """Fraction of positions whose preceding context has at least one cached green token."""
    h = cache.h
    if len(tokens) <= h:
        return 0.0
    hits = sum(1 for i in range(h, len(tokens)) if tuple(tokens[i - h:i]) in cache)
    return hits / (len(tokens) - h)


# -- forgery ---------------------------------------------------------------------

@dataclass
class AttackReport:
    trials: int
    successes: int
    alpha: float
    delta_prime: float
    length: int
    p_values: list[float]
    hit_rate: float
    all_verified: bool
    cache_contexts: int
    cache_unique_pairs: int
    cache_observed_pairs: int
    required_hit_rate: float
    baseline_upper: float

    @property
    def asr(self) -> float:
        return self.successes / self.trials if self.trials else float("nan")

    @property
    def median_p(self) -> float:
        return float(np.median(self.p_values)) if self.p_values else float("nan")

    @property
    def quartiles(self) -> tuple[float, float, float]:
        if not self.p_values:
            return (float("nan"),) * 3
        q = np.quantile(self.p_values, [0.25, 0.5, 0.75])
        return float(q[0]), float(q[1]), float(q[2])

    @property
    def consistent(self) -> bool:
        """ASR stays within the no-signal band unless the cache is big enough to matter."""
        return self.asr <= self.baseline_upper or self.hit_rate > self.required_hit_rate

    def to_text(self) -> str:
        q1, q2, q3 = self.quartiles
        rows = [
            ("trials", self.trials), ("successes", self.successes), ("asr", f"{self.asr:.4f}"),
            ("alpha", f"{self.alpha:g}"), ("delta_prime", self.delta_prime), ("length", self.length),
            ("p_q1", f"{q1:.4g}"), ("p_median", f"{q2:.4g}"), ("p_q3", f"{q3:.4g}"),
            ("hit_rate", f"{self.hit_rate:.4f}"), ("required_hit_rate", f"{self.required_hit_rate:.4f}"),
            ("baseline_upper_99", f"{self.baseline_upper:.4f}"), ("all_verified", self.all_verified),
            ("cache_contexts", self.cache_contexts), ("cache_unique_pairs", self.cache_unique_pairs),
            ("cache_observed_pairs", self.cache_observed_pairs), ("consistent", self.consistent),
        ]
        return "".join(f"{k:<20} {v}\n" for k, v in rows)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(asr=self.asr, median_p=self.median_p, consistent=self.consistent)
        return d


def baseline_upper(trials: int, alpha: float, level: float = 0.99) -> float:
    """Upper end of the central ``level`` range of Binomial(trials, alpha), as a rate."""
    return float(stats.binom.ppf(0.5 + level / 2, trials, alpha)) / trials


def forge(
    model: SyntheticModel,
    cache: GreenCache,
    params: WatermarkParams,
    detect: Callable[[Sequence[int]], DetectionReport],
    rng: np.random.Generator,
    delta_prime: float = 4.0,
    length: int = 300,
    alpha: float = 1e-2,
    trials: int = 500,
    boost: Callable[[tuple[int, ...]], Sequence[int]] | None = None,
) -> AttackReport:
    """Generate ``trials`` unwatermarked texts with cached green tokens boosted, then detect each.

    ``boost`` overrides the cache lookup, e.g. with a key-holder oracle for a
    ceiling experiment; ``cache`` still supplies hit statistics.
    """
    boost = boost or cache.lookup
    p_values, hits, successes, verified = [], [], 0, True
    for _ in range(trials):
        text = generate(model, None, params, length, rng, boost=boost, boost_delta=delta_prime).tokens
        hits.append(hit_rate(cache, text))
        rep = detect(text)
        verified &= rep.verified
        if rep.verified:
            p_values.append(rep.p_value)
            successes += rep.p_value < alpha
    return AttackReport(
        trials=trials, successes=successes, alpha=alpha, delta_prime=delta_prime, length=length,
        p_values=p_values, hit_rate=float(np.mean(hits)) if hits else 0.0, all_verified=verified,
        cache_contexts=cache.n_contexts, cache_unique_pairs=cache.unique_pairs,
        cache_observed_pairs=cache.observed_pairs,
        required_hit_rate=required_hit_rate(length, alpha, params.gamma),
        baseline_upper=baseline_upper(trials, alpha),
    )
