"""Green/red token coloring on top of the VOPRF.

An (h+1)-gram ``context || token`` is green when the leading ``int_width``
bits of its PRF output, read as a big-endian integer, fall below
``floor(gamma * 2**int_width)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Sequence

import numpy as np

from . import voprf

NGRAM_MAGIC = b"VOW-NG1"
MAX_TOKEN_ID = 2**32 - 1


def _as_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, str):
        return Fraction(value.strip())
    if isinstance(value, float):
        return Fraction(value).limit_denominator(10**9)
    return Fraction(value)


@dataclass(frozen=True)
class WatermarkParams:
    h: int = 4
    gamma: Fraction = Fraction(1, 2)
    delta: float = 2.5
    int_width: int = 64

    def __post_init__(self):
        object.__setattr__(self, "gamma", _as_fraction(self.gamma))
        object.__setattr__(self, "delta", float(self.delta))
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not self.delta >= 0:
            raise ValueError(f"delta must be non-negative, got {self.delta}")
        if self.h < 1:
            raise ValueError("context length h must be at least 1")
        if not 1 <= self.int_width <= 256:
            raise ValueError("int_width must be in [1, 256]")

    @property
    def threshold(self) -> int:
        return green_threshold(self.gamma, self.int_width)

    def to_text(self) -> str:
        return (
            f"h = {self.h}\n"
            f"gamma = {self.gamma.numerator}/{self.gamma.denominator}\n"
            f"delta = {self.delta!r}\n"
            f"int_width = {self.int_width}\n"
        )

    @classmethod
    def from_text(cls, text: str) -> "WatermarkParams":
        values = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
        return cls(
            h=int(values.get("h", 4)),
            gamma=Fraction(values.get("gamma", "1/2")),
            delta=float(values.get("delta", 2.5)),
            int_width=int(values.get("int_width", 64)),
        )

    def to_dict(self) -> dict:
        return {
            "h": self.h,
            "gamma": f"{self.gamma.numerator}/{self.gamma.denominator}",
            "delta": self.delta,
            "int_width": self.int_width,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WatermarkParams":
        return cls(h=int(d["h"]), gamma=Fraction(d["gamma"]), delta=float(d["delta"]),
                   int_width=int(d["int_width"]))


@dataclass(frozen=True)
class NGramRecord:
    context: tuple[int, ...]
    token: int
    encoded: bytes = field(repr=False)

    @classmethod
    def build(cls, context: Sequence[int], token: int) -> "NGramRecord":
        context = tuple(int(t) for t in context)
        return cls(context, int(token), encode_ngram(context, token))


@dataclass(frozen=True)
class ColorVerdict:
    prf_prefix: int
    is_green: bool


def green_threshold(gamma, int_width: int) -> int:
    """``floor(gamma * 2**int_width)``, exactly. Accepts the closed interval [0, 1]."""
    gamma = _as_fraction(gamma)
    if not 0 <= gamma <= 1:
        raise ValueError("gamma outside [0, 1]")
    return (gamma.numerator << int_width) // gamma.denominator


def encode_context(context: Sequence[int]) -> bytes:
    """Layout shared by n-gram encodings: magic, h, then 4-byte token ids."""
    out = bytearray(NGRAM_MAGIC)
    out += len(context).to_bytes(2, "big")
    for t in context:
        if not 0 <= t <= MAX_TOKEN_ID:
            raise ValueError(f"token id {t} outside 32-bit range")
        out += int(t).to_bytes(4, "big")
    return bytes(out)


def encode_ngram(context: Sequence[int], token: int, h: int | None = None) -> bytes:
    if h is not None and len(context) != h:
        raise ValueError(f"context has {len(context)} tokens, expected h={h}")
    if not 0 <= token <= MAX_TOKEN_ID:
        raise ValueError(f"token id {token} outside 32-bit range")
    return encode_context(context) + int(token).to_bytes(4, "big")


def prf_prefix(prf_output: bytes, int_width: int) -> int:
    nbytes = -(-int_width // 8)
    return int.from_bytes(prf_output[:nbytes], "big") >> (8 * nbytes - int_width)


def color_verdict(prf_output: bytes, gamma, int_width: int = 64) -> ColorVerdict:
    prefix = prf_prefix(prf_output, int_width)
    return ColorVerdict(prefix, prefix < green_threshold(gamma, int_width))


def is_green_local(sk: int, params: WatermarkParams, context: Sequence[int], token: int) -> ColorVerdict:
    x = encode_ngram(context, token, params.h)
    return color_verdict(voprf.evaluate(sk, x), params.gamma, params.int_width)


def local_oracle(sk: int, params: WatermarkParams) -> Callable[[Sequence[int], int], bool]:
    """``(context, token) -> is_green`` backed by direct PRF evaluation."""
    threshold = params.threshold
    width = params.int_width
    h = params.h

    def is_green(context, token) -> bool:
        out = voprf.evaluate(sk, encode_ngram(context, token, h))
        return prf_prefix(out, width) < threshold

    return is_green


def apply_bias(logits, greens: Iterable[int], delta: float) -> np.ndarray:
    """Return a copy of ``logits`` with ``delta`` added at every green index."""
    biased = np.array(logits, dtype=float, copy=True)
    idx = np.fromiter(greens, dtype=np.int64)
    if idx.size:
        biased[idx] += delta
    return biased


def local_batch_oracle(sk: int, params: WatermarkParams) -> Callable[[Sequence[bytes]], list[bool]]:
    """Encoded n-grams -> green flags, evaluated directly with the secret key."""
    threshold, width = params.threshold, params.int_width

    def classify(inputs: Sequence[bytes]) -> list[bool]:
        return [prf_prefix(voprf.evaluate(sk, x), width) < threshold for x in inputs]

    return classify


class MemoOracle:
    """Context oracle that remembers every verdict it hands out.

    Wraps ``local_oracle``; ``batch`` answers repeat queries from memory so a
    corpus can be classified without recomputing colors already known from
    its own generation.
    """

    def __init__(self, sk: int, params: WatermarkParams):
        self.params = params
        self._threshold = params.threshold
        self._sk = sk
        self.memo: dict[bytes, bool] = {}

    def _color(self, x: bytes) -> bool:
        v = self.memo.get(x)
        if v is None:
            v = prf_prefix(voprf.evaluate(self._sk, x), self.params.int_width) < self._threshold
            self.memo[x] = v
        return v

    def __call__(self, context, token) -> bool:
        return self._color(encode_ngram(context, token, self.params.h))

    def batch(self, inputs: Sequence[bytes]) -> list[bool]:
        return [self._color(x) for x in inputs]
