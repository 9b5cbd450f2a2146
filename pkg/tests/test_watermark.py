from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from vow import voprf
from vow.watermark import (
    WatermarkParams, NGramRecord, apply_bias, color_verdict, encode_ngram, green_threshold,
    is_green_local, local_batch_oracle, local_oracle, prf_prefix, MemoOracle,
)

token_ids = st.integers(0, 2**32 - 1)


def test_encoding_layout():
    assert encode_ngram([0], 0).hex(" ") == "56 4f 57 2d 4e 47 31 00 01 00 00 00 00 00 00 00 00"
    assert len(encode_ngram([1, 2, 3, 4], 5)) == 29


@given(st.lists(token_ids, min_size=1, max_size=6), token_ids)
def test_encoding_length(ctx, tok):
    assert len(encode_ngram(ctx, tok)) == 7 + 2 + 4 * (len(ctx) + 1)


@given(st.lists(token_ids, min_size=1, max_size=4), token_ids,
       st.lists(token_ids, min_size=1, max_size=4), token_ids)
def test_encoding_injective(c1, t1, c2, t2):
    if (c1, t1) != (c2, t2):
        assert encode_ngram(c1, t1) != encode_ngram(c2, t2)


def test_encoding_collision_scan():
    rng = np.random.default_rng(0)
    seen = set()
    pairs = set()
    for row in rng.integers(0, 2**32, size=(200_000, 5), dtype=np.uint64).tolist():
        pairs.add(tuple(row))
        seen.add(encode_ngram(row[:4], row[4]))
    assert len(seen) == len(pairs)


def test_encoding_errors():
    with pytest.raises(ValueError):
        encode_ngram([1, 2], 3, h=4)
    with pytest.raises(ValueError):
        encode_ngram([2**32], 0)
    with pytest.raises(ValueError):
        encode_ngram([0], -1)


def test_params_validation_and_text_round_trip():
    p = WatermarkParams(h=3, gamma=Fraction(1, 4), delta=1.5, int_width=32)
    assert WatermarkParams.from_text(p.to_text()) == p
    assert WatermarkParams.from_dict(p.to_dict()) == p
    assert "gamma = 1/4" in p.to_text()
    for bad in (dict(gamma=0), dict(gamma=1), dict(delta=-1), dict(h=0), dict(int_width=0),
                dict(int_width=257)):
        with pytest.raises(ValueError):
            WatermarkParams(**bad)


def test_threshold_exact():
    assert green_threshold(Fraction(1, 2), 64) == 2**63
    assert green_threshold(Fraction(1, 3), 64) == (2**64) // 3
    assert green_threshold(0, 64) == 0
    assert green_threshold(1, 64) == 2**64


@given(st.binary(min_size=32, max_size=32), st.integers(1, 256))
def test_prefix_is_leading_bits(out, width):
    assert prf_prefix(out, width) == int.from_bytes(out, "big") >> (256 - width)


@given(st.binary(min_size=32, max_size=32), st.fractions(0, 1))
def test_verdict_iff_prefix_below_threshold(out, gamma):
    v = color_verdict(out, gamma, 64)
    assert v.is_green == (v.prf_prefix < (gamma.numerator * 2**64) // gamma.denominator)


def test_gamma_boundaries():
    rng = np.random.default_rng(0)
    for _ in range(200):
        out = rng.bytes(32)
        assert color_verdict(out, 1, 64).is_green
        assert not color_verdict(out, 0, 64).is_green


def test_local_verdicts_consistent(keypair):
    p = WatermarkParams()
    oracle = local_oracle(keypair.sk, p)
    batch = local_batch_oracle(keypair.sk, p)
    memo = MemoOracle(keypair.sk, p)
    ctx = (1, 2, 3, 4)
    for t in range(20):
        v = is_green_local(keypair.sk, p, ctx, t)
        assert v == is_green_local(keypair.sk, p, ctx, t)
        assert oracle(ctx, t) == v.is_green == memo(ctx, t)
        assert batch([encode_ngram(ctx, t)]) == [v.is_green]
    assert len(memo.memo) == 20


def test_insertion_and_oblivious_verdicts_agree(keypair):
    p = WatermarkParams()
    rng = np.random.default_rng(1)
    states, expect = [], []
    for _ in range(50):
        ctx, tok = rng.integers(0, 1000, 4).tolist(), int(rng.integers(0, 1000))
        states.append(voprf.blind(encode_ngram(ctx, tok), rng))
        expect.append(is_green_local(keypair.sk, p, ctx, tok).is_green)
    evaluated, proof = voprf.blind_evaluate_batch(keypair, [s.blinded for s in states])
    outs = voprf.verify_and_finalize(keypair.pk, states, evaluated, proof)
    assert [color_verdict(y, p.gamma).is_green for y in outs] == expect


def test_green_fraction_concentrates(keypair):
    p = WatermarkParams()
    oracle = local_batch_oracle(keypair.sk, p)
    rng = np.random.default_rng(2)
    xs = [encode_ngram(c[:4], c[4]) for c in rng.integers(0, 50_000, size=(20_000, 5)).tolist()]
    frac = np.mean(oracle(xs))
    assert abs(frac - 0.5) < 3 * np.sqrt(0.25 / len(xs))


def test_record_build():
    r = NGramRecord.build([1, 2], 3)
    assert r.context == (1, 2) and r.token == 3 and r.encoded == encode_ngram([1, 2], 3)


def test_apply_bias():
    logits = np.array([1.0, 2.0])
    out = apply_bias(logits, {0}, 2.5)
    assert out.tolist() == [3.5, 2.0]
    assert logits.tolist() == [1.0, 2.0]
    assert apply_bias(logits, set(), 2.5).tolist() == [1.0, 2.0]
    assert apply_bias(logits, {0, 1}, 0.0).tolist() == [1.0, 2.0]


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=30), st.data())
def test_apply_bias_property(values, data):
    greens = data.draw(st.sets(st.integers(0, len(values) - 1)))
    delta = data.draw(st.floats(0, 10))
    out = apply_bias(values, greens, delta)
    for i, v in enumerate(values):
        assert out[i] == (v + delta if i in greens else v)
