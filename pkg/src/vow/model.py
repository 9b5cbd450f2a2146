"""Deterministic stand-in for a language model, plus the generation loop.

Token ids run over ``0..N-1``; id ``N`` is reserved as a BOS pad for contexts
that start before the prompt.
"""
from __future__ import annotations

import hashlib
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .sampler import LogitVector, sample_multinomial_rejection, sample_topk
from .watermark import WatermarkParams, local_oracle

log = logging.getLogger(__name__)

ContextOracle = Callable[[Sequence[int], int], bool]


@dataclass(frozen=True)
class Vocabulary:
    size: int

    def __post_init__(self):
        if self.size < 2:
            raise ValueError("vocabulary needs at least two tokens")

    @property
    def bos(self) -> int:
        return self.size


@dataclass(frozen=True)
class SyntheticModel:
    """Zipf-shaped base logits plus a context-keyed Gaussian perturbation.

    ``logit_j(context) = -zipf_exponent * ln(j + 1) + noise_scale * eps_j(context)``
    with ``eps`` drawn from an SFC64 generator seeded by a 64-bit blake2b hash
    of ``(seed, last context_width tokens)``.
    """

    seed: int = 0
    vocab_size: int = 10_000
    zipf_exponent: float = 1.0
    noise_scale: float = 1.0
    context_width: int = 4
    _base: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.zipf_exponent < 0 or self.noise_scale < 0:
            raise ValueError("zipf_exponent and noise_scale must be non-negative")
        Vocabulary(self.vocab_size)
        base = -self.zipf_exponent * np.log(np.arange(1, self.vocab_size + 1, dtype=float))
        object.__setattr__(self, "_base", base)

    @property
    def vocab(self) -> Vocabulary:
        return Vocabulary(self.vocab_size)

    def context_key(self, context: Sequence[int]) -> int:
        ctx = list(context)[-self.context_width:] if self.context_width else []
        blob = self.seed.to_bytes(8, "big", signed=True) + b"".join(
            int(t).to_bytes(4, "big") for t in ctx)
        return int.from_bytes(hashlib.blake2b(blob, digest_size=8).digest(), "big")

    def logits(self, context: Sequence[int]) -> np.ndarray:
        if self.noise_scale == 0:
            return self._base.copy()
        noise = np.random.Generator(np.random.SFC64(self.context_key(context))).standard_normal(self.vocab_size)
        return self._base + self.noise_scale * noise

    def probs(self, context: Sequence[int] = ()) -> np.ndarray:
        l = self.logits(context)
        z = np.exp(l - l.max())
        return z / z.sum()


@dataclass
class GenerationResult:
    tokens: list[int]
    trials: list[int] = field(default_factory=list)
    calls: list[int] = field(default_factory=list)

    @property
    def mean_trials(self) -> float:
        return float(np.mean(self.trials)) if self.trials else float("nan")

    @property
    def mean_calls(self) -> float:
        return float(np.mean(self.calls)) if self.calls else float("nan")


def padded_context(history: Sequence[int], h: int, bos: int) -> tuple[int, ...]:
    ctx = list(history[-h:])
    return tuple([bos] * (h - len(ctx)) + ctx)


def generate(
    model: SyntheticModel,
    is_green: ContextOracle | None,
    params: WatermarkParams,
    length: int,
    rng: np.random.Generator,
    prompt: Sequence[int] = (),
    strategy: str = "multinomial",
    k: int = 50,
    top_p: float = 1.0,
    temperature: float = 1.0,
    boost: Callable[[tuple[int, ...]], Sequence[int]] | None = None,
    boost_delta: float = 0.0,
) -> GenerationResult:
    """Autoregressive sampling of ``length`` new tokens.

    ``is_green`` is the watermark color oracle; ``None`` generates
    unwatermarked text.  ``boost`` (used by the forgery attack) returns token
    ids whose logits get ``boost_delta`` added in the given context.
    """
    if length < 1:
        raise ValueError("length must be at least 1")
    if strategy not in ("multinomial", "topk"):
        raise ValueError(f"unknown strategy {strategy!r}")
    bos = model.vocab.bos
    history = list(prompt)
    out = GenerationResult(tokens=[])
    delta = params.delta if is_green is not None else 0.0
    for _ in range(length):
        ctx = padded_context(history, params.h, bos)
        scores = model.logits(history)
        if boost is not None:
            extra = boost(ctx)
            if len(extra):
                scores[np.asarray(extra, dtype=np.int64)] += boost_delta
        if is_green is None:
            color = _never_green
        else:
            def color(t, ctx=ctx):
                return is_green(ctx, t)
        if strategy == "multinomial":
            tok, trials = sample_multinomial_rejection(LogitVector(scores, temperature), delta, color, rng)
            out.trials.append(trials)
        else:
            tok, calls = sample_topk(scores, k, delta, color, rng, top_p=top_p, temperature=temperature)
            out.calls.append(calls)
        history.append(tok)
        out.tokens.append(tok)
    return out


def _never_green(_t: int) -> bool:
    return False


def generate_watermarked(model, sk: int, params: WatermarkParams, length: int, rng, **kw) -> GenerationResult:
    return generate(model, local_oracle(sk, params), params, length, rng, **kw)


# -- token files -----------------------------------------------------------

def write_tokens(path: Path, tokens: Sequence[int]) -> None:
    Path(path).write_text(json.dumps([int(t) for t in tokens]) + "\n")


def ingest_tokens(path: Path, vocab_size: int | None = None) -> list[int]:
    """Read a token file: one JSON integer array per line, concatenated."""
    tokens: list[int] = []
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            arr = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{lineno}: not a JSON array ({exc.msg})") from None
        if not isinstance(arr, list) or not all(isinstance(t, int) and not isinstance(t, bool) for t in arr):
            raise ValueError(f"{path}:{lineno}: expected an array of integers")
        tokens.extend(arr)
    if not tokens:
        warnings.warn(f"{path}: no tokens found", stacklevel=2)
    for t in tokens:
        if t < 0 or (vocab_size is not None and t >= vocab_size):
            raise ValueError(f"{path}: token id {t} outside vocabulary of size {vocab_size}")
    return tokens


def ingest_corpus(directory: Path, vocab_size: int | None = None) -> list[list[int]]:
    return [ingest_tokens(p, vocab_size) for p in sorted(Path(directory).glob("*.json*"))]
