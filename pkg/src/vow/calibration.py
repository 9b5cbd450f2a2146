"""Null-hypothesis harnesses: detector FPR calibration and IsGreen pseudorandomness.

The exact binomial test is discrete, so its size at a nominal ``alpha`` is
the attained size ``Pr(p < alpha | n)``, usually strictly below ``alpha``.
FPR checks compare against that attained size.  Uniformity is checked on
randomized probability-integral-transform values, which are exactly U(0,1)
under the null.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from . import voprf
from .detector import attained_size, binom_sf_exact, dedup_ngrams
from .model import SyntheticModel
from .watermark import WatermarkParams, encode_ngram, prf_prefix

ECDF_POINTS = (1e-3, 1e-2, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9)


def iid_text(model: SyntheticModel, length: int, rng: np.random.Generator) -> np.ndarray:
    """Unwatermarked text from a context-free model in one vectorized draw.

    Only valid when ``noise_scale == 0``: then every step has the same
    distribution and this equals the autoregressive loop with ``delta = 0``.
    """
    if model.noise_scale != 0:
        raise ValueError("iid_text needs a context-free model (noise_scale = 0)")
    return rng.choice(model.vocab_size, size=length, p=model.probs())


def green_count(sk: int, params: WatermarkParams, tokens: Sequence[int]) -> tuple[int, int]:
    """(n unique n-grams, green count) with the secret key."""
    records = dedup_ngrams(tokens, params.h)
    thr, width = params.threshold, params.int_width
    g = sum(prf_prefix(voprf.evaluate(sk, r.encoded), width) < thr for r in records)
    return len(records), g


def randomized_pit(g: int, n: int, gamma, u: float) -> float:
    """``Pr(X > g) + u * Pr(X = g)``; exactly uniform under H0 when ``u ~ U(0,1)``."""
    upper = binom_sf_exact(g + 1, n, gamma) if g < n else 0.0
    return upper + u * (binom_sf_exact(g, n, gamma) - upper)


@dataclass
class FprRow:
    alpha: float
    rejections: int
    samples: int
    expected_size: float
    ci_low: float
    ci_high: float

    @property
    def fpr(self) -> float:
        return self.rejections / self.samples

    @property
    def within_ci(self) -> bool:
        """Expected (attained) size lies in the exact 99% CI of the observed rate."""
        return self.ci_low <= self.expected_size <= self.ci_high

    @property
    def nominal_within_ci(self) -> bool:
        return self.ci_low <= self.alpha <= self.ci_high

    @property
    def super_uniform(self) -> bool:
        """Observed rate is not significantly above alpha."""
        return self.ci_low <= self.alpha


@dataclass
class CalibrationReport:
    params: WatermarkParams
    n_values: np.ndarray
    g_values: np.ndarray
    p_values: np.ndarray
    pit_values: np.ndarray
    rows: list[FprRow] = field(default_factory=list)

    @property
    def samples(self) -> int:
        return int(self.p_values.size)

    def ks_pit(self):
        return stats.kstest(self.pit_values, "uniform")

    def ks_raw(self):
        return stats.kstest(self.p_values, "uniform")

    @staticmethod
    def ks_critical(n: int, level: float = 0.01) -> float:
        return float(stats.kstwo.isf(level, n))

    def ecdf(self, points: Sequence[float] = ECDF_POINTS) -> list[tuple[float, float]]:
        p = np.sort(self.p_values)
        return [(x, float(np.searchsorted(p, x, side="right")) / p.size) for x in points]

    def to_text(self) -> str:
        out = [f"samples {self.samples}", f"params {self.params.to_dict()}",
               f"mean_unique_ngrams {self.n_values.mean():.2f}"]
        out.append("ecdf")
        out += [f"  F({x:g}) = {v:.5f}" for x, v in self.ecdf()]
        out.append("fpr")
        for r in self.rows:
            out.append(f"  alpha={r.alpha:g} rejections={r.rejections} fpr={r.fpr:.6f} "
                       f"attained_size={r.expected_size:.6f} ci99=[{r.ci_low:.6f}, {r.ci_high:.6f}] "
                       f"within_ci={r.within_ci} nominal_within_ci={r.nominal_within_ci}")
        ks = self.ks_pit()
        raw = self.ks_raw()
        out.append(f"ks_randomized_pit D={ks.statistic:.6f} p={ks.pvalue:.4f} "
                   f"critical_1pct={self.ks_critical(self.samples):.6f}")
        out.append(f"ks_raw_pvalues D={raw.statistic:.6f} (discrete; reference only)")
        return "\n".join(out) + "\n"


def fpr_rows(n_values: np.ndarray, p_values: np.ndarray, gamma, alphas: Sequence[float]) -> list[FprRow]:
    rows = []
    ns, counts = np.unique(n_values, return_counts=True)
    for a in alphas:
        size = sum(c * attained_size(int(n), gamma, a) for n, c in zip(ns, counts)) / n_values.size
        k = int(np.count_nonzero(p_values < a))
        ci = stats.binomtest(k, int(p_values.size), a).proportion_ci(0.99, method="exact")
        rows.append(FprRow(a, k, int(p_values.size), float(size), float(ci.low), float(ci.high)))
    return rows


CHUNK = 1000


def _null_chunk(job) -> np.ndarray:
    sk, params, count, length, model, seed = job
    rng = np.random.default_rng(seed)
    out = np.empty((count, 4))
    for i in range(count):
        n, g = green_count(sk, params, iid_text(model, length, rng).tolist())
        out[i] = n, g, binom_sf_exact(g, n, params.gamma), randomized_pit(g, n, params.gamma, rng.random())
    return out


def calibrate(
    sk: int,
    params: WatermarkParams,
    samples: int,
    length: int = 255,
    model: SyntheticModel | None = None,
    rng: np.random.Generator | None = None,
    alphas: Sequence[float] = (1e-2, 1e-3),
    workers: int = 1,
) -> CalibrationReport:
    """Score ``samples`` unwatermarked texts with the key and summarize the null p-values.

    Texts are scored in fixed-size chunks, each seeded from ``rng``, so the
    result does not depend on ``workers``.
    """
    model = model or SyntheticModel(vocab_size=10_000, zipf_exponent=0.0, noise_scale=0.0)
    rng = rng or np.random.default_rng()
    sizes = [min(CHUNK, samples - s) for s in range(0, samples, CHUNK)]
    seeds = rng.integers(0, 2**63, size=len(sizes))
    jobs = [(sk, params, c, length, model, int(seed)) for c, seed in zip(sizes, seeds)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_null_chunk, jobs))
    else:
        parts = [_null_chunk(j) for j in jobs]
    arr = np.concatenate(parts) if parts else np.empty((0, 4))
    ns, gs = arr[:, 0].astype(np.int64), arr[:, 1].astype(np.int64)
    ps, pit = arr[:, 2], arr[:, 3]
    return CalibrationReport(params, ns, gs, ps, pit, fpr_rows(ns, ps, params.gamma, alphas))


# -- IsGreen pseudorandomness -------------------------------------------------

@dataclass
class PseudorandomnessReport:
    vocab_size: int
    chi2_pvalues: np.ndarray
    green_fractions: np.ndarray

    @property
    def ks(self):
        return stats.kstest(self.chi2_pvalues, "uniform")

    @property
    def ks_critical(self) -> float:
        return float(stats.kstwo.isf(0.01, self.chi2_pvalues.size))

    def to_text(self) -> str:
        ks = self.ks
        return (f"partitions {self.chi2_pvalues.size} vocab {self.vocab_size}\n"
                f"mean_green_fraction {self.green_fractions.mean():.5f}\n"
                f"ks D={ks.statistic:.5f} critical_1pct={self.ks_critical:.5f} p={ks.pvalue:.4f}\n")


def pseudorandomness(
    params: WatermarkParams,
    partitions: int = 100,
    vocab_size: int = 2000,
    rng: np.random.Generator | None = None,
    vocab_range: int = 50_000,
) -> PseudorandomnessReport:
    """Partition a vocabulary under fresh keys and random contexts; chi-squared per partition.

    Each partition draws a new key and a random context, colors every token
    of a ``vocab_size`` vocabulary, and tests the green/red split against
    ``(gamma, 1 - gamma)``.  Under pseudorandomness the p-values are
    (nearly) uniform.
    """
    rng = rng or np.random.default_rng()
    gamma = float(params.gamma)
    thr, width = params.threshold, params.int_width
    pvals = np.empty(partitions)
    fracs = np.empty(partitions)
    expected = np.array([gamma * vocab_size, (1 - gamma) * vocab_size])
    for i in range(partitions):
        kp = voprf.setup(rng.bytes(32))
        ctx = [int(t) for t in rng.integers(0, vocab_range, size=params.h)]
        g = sum(prf_prefix(voprf.evaluate(kp.sk, encode_ngram(ctx, t)), width) < thr
                for t in range(vocab_size))
        pvals[i] = stats.chisquare([g, vocab_size - g], expected).pvalue
        fracs[i] = g / vocab_size
    return PseudorandomnessReport(vocab_size, pvals, fracs)


def detector_power(n: int, alpha: float, gamma, green_rate: float) -> float:
    """Pr(exact test rejects) when each of ``n`` n-grams is green w.p. ``green_rate``."""
    g_min = next((g for g in range(n + 1) if binom_sf_exact(g, n, gamma) < alpha), None)
    if g_min is None:
        return 0.0
    return float(stats.binom.sf(g_min - 1, n, green_rate))


def analytic_green_rate(gamma, delta: float) -> float:
    g = float(gamma)
    return g * math.exp(delta) / (g * math.exp(delta) + 1 - g)
