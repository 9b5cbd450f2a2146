import os
import random
import stat

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from vow import group, voprf
from vow.group import GroupError
from vow.voprf import DleqProof, KeyPair

import oracles

FROZEN_SK = 0x0123456789ABCDEF0123456789ABCDEF0123456789ABCDEF0123456789ABCDE
# computed with oracles.ref_evaluate (pure-Python curve arithmetic)
FROZEN_VECTORS = {
    b"VOW": "9ccd28d417e42c093d74f16309e2bdd86473d292b610f785e7778a1003725b62",
    b"\x00": "0390b6e30b786b6a8187f23b3d6c8f30682e764888de9f0132123ff11e155bf0",
    bytes(range(29)): "12718c6cc01b8e422d868dec49f79000b1964487bf016313c72c36512afaa21a",
}
FROZEN_PK = "1cadc8618bdf3a4eeff12a2fd92e764d056050435f2ad010306ac7e7e4302e76"


def test_frozen_vectors():
    kp = KeyPair.from_secret(FROZEN_SK)
    assert kp.pk.hex() == FROZEN_PK
    for x, y in FROZEN_VECTORS.items():
        assert voprf.evaluate(FROZEN_SK, x).hex() == y


@given(st.integers(1, group.GROUP_ORDER - 1), st.binary(min_size=1, max_size=40))
@settings(max_examples=25)
def test_evaluate_matches_reference(sk, x):
    assert voprf.evaluate(sk, x) == oracles.ref_evaluate(sk, x)


def test_setup_deterministic_with_seed():
    assert voprf.setup(b"s") == voprf.setup(b"s")
    assert voprf.setup(b"s") != voprf.setup(b"t")


def test_setup_fresh_keys_distinct():
    sks = {voprf.setup().sk for _ in range(1000)}
    assert len(sks) == 1000


def test_keypair_invariants():
    with pytest.raises(GroupError):
        KeyPair(0, group.IDENTITY)
    kp = voprf.setup(b"a")
    with pytest.raises(GroupError):
        KeyPair(kp.sk, group.GENERATOR if kp.pk != group.GENERATOR else group.mul_base(2))
    assert kp.pk != group.IDENTITY


def test_evaluate_rejects_empty_input():
    with pytest.raises(ValueError):
        voprf.evaluate(5, b"")
    with pytest.raises(ValueError):
        voprf.blind(b"")


@given(st.binary(min_size=1, max_size=64), st.integers(0, 2**32))
@settings(max_examples=30)
def test_round_trip(x, seed):
    kp = voprf.setup(b"rt")
    state = voprf.blind(x, random.Random(seed))
    evaluated, proof = voprf.blind_evaluate_batch(kp, [state.blinded])
    assert voprf.verify_batch(kp.pk, [state.blinded], evaluated, proof)
    assert voprf.finalize(state, evaluated[0]) == voprf.evaluate(kp.sk, x)


def test_two_blindings_same_output(keypair):
    rng = random.Random(0)
    for _ in range(100):
        x = rng.randbytes(16)
        a, b = voprf.blind(x, rng), voprf.blind(x, rng)
        assert a.blinded != b.blinded
        (ea, eb), _ = voprf.blind_evaluate_batch(keypair, [a.blinded, b.blinded])
        assert voprf.finalize(a, ea) == voprf.finalize(b, eb) == voprf.evaluate(keypair.sk, x)


def test_tampered_evaluation_changes_output(keypair):
    st_ = voprf.blind(b"tamper")
    (e,), _ = voprf.blind_evaluate_batch(keypair, [st_.blinded])
    bad = group.add(e, group.GENERATOR)
    assert voprf.finalize(st_, bad) != voprf.evaluate(keypair.sk, b"tamper")


def test_blinding_hides_input_leading_byte():
    # leading byte of blinded elements of one fixed input vs of another
    rng = np.random.default_rng(0)
    counts = np.zeros(256)
    for _ in range(4000):
        counts[voprf.blind(b"fixed", rng).blinded[0]] += 1
    # canonical encodings are even field elements, so only even leading bytes occur
    assert counts[1::2].sum() == 0
    res = stats.chisquare(counts[0::2])
    assert res.pvalue > 1e-4


def test_proof_is_64_bytes_for_any_batch(keypair):
    for n in (1, 2, 17):
        blinded = [voprf.blind(bytes([i + 1])).blinded for i in range(n)]
        _, proof = voprf.blind_evaluate_batch(keypair, blinded)
        assert len(proof.to_bytes()) == 64
        assert DleqProof.from_bytes(proof.to_bytes()) == proof


def test_batch_of_one_is_plain_dleq(keypair):
    b = voprf.blind(b"one").blinded
    (e,), proof = voprf.blind_evaluate_batch(keypair, [b])
    assert voprf.verify_batch(keypair.pk, [b], [e], proof)
    # the proof also checks under the general-batch verifier with per-input mode
    evs, proofs = voprf.blind_evaluate_batch(keypair, [b], per_input_proofs=True)
    assert voprf.verify_batch(keypair.pk, [b], evs, proofs[0])


def test_wrong_key_rejected(keypair):
    other = voprf.setup(b"other")
    rng = random.Random(3)
    for _ in range(1000):
        b = voprf.blind(rng.randbytes(8), rng).blinded
        evaluated, proof = voprf.blind_evaluate_batch(other, [b], rng=rng)
        assert not voprf.verify_batch(keypair.pk, [b], evaluated, proof)


def test_reordering_rejected(keypair):
    blinded = [voprf.blind(bytes([i + 1])).blinded for i in range(6)]
    evaluated, proof = voprf.blind_evaluate_batch(keypair, blinded)
    assert voprf.verify_batch(keypair.pk, blinded, evaluated, proof)
    b2, e2 = list(blinded), list(evaluated)
    b2[1], b2[4] = b2[4], b2[1]
    e2[1], e2[4] = e2[4], e2[1]
    assert not voprf.verify_batch(keypair.pk, b2, e2, proof)


def test_verify_errors(keypair):
    b = [voprf.blind(b"x").blinded]
    e, proof = voprf.blind_evaluate_batch(keypair, b)
    with pytest.raises(ValueError):
        voprf.verify_batch(keypair.pk, b, e + e, proof)
    with pytest.raises(ValueError):
        voprf.verify_batch(keypair.pk, [], [], proof)
    assert not voprf.verify_batch(keypair.pk, b, [group.IDENTITY], proof)
    assert not voprf.verify_batch(keypair.pk, b, [b"\xff" * 32], proof)


def test_identity_blinded_input_rejected(keypair):
    with pytest.raises(GroupError):
        voprf.blind_evaluate_batch(keypair, [group.IDENTITY])
    with pytest.raises(ValueError):
        voprf.blind_evaluate_batch(keypair, [])


def test_verify_and_finalize_raises_on_tamper(keypair):
    states = [voprf.blind(bytes([i + 1])) for i in range(4)]
    evaluated, proof = voprf.blind_evaluate_batch(keypair, [s.blinded for s in states])
    outs = voprf.verify_and_finalize(keypair.pk, states, evaluated, proof)
    assert outs == [voprf.evaluate(keypair.sk, s.input_bytes) for s in states]
    evaluated[2] = group.add(evaluated[2], group.GENERATOR)
    with pytest.raises(voprf.VerificationError):
        voprf.verify_and_finalize(keypair.pk, states, evaluated, proof)


def test_key_files(tmp_path):
    kp = voprf.setup(b"files")
    sk_path, pk_path = tmp_path / "k", tmp_path / "k.pub"
    voprf.write_keys(kp, sk_path, pk_path)
    assert stat.S_IMODE(os.stat(sk_path).st_mode) == 0o600
    assert sk_path.read_bytes()[:8] == b"VOWKEY01" and len(sk_path.read_bytes()) == 40
    assert voprf.load_secret_key(sk_path) == kp
    assert voprf.load_public_key(pk_path) == kp.pk
    with pytest.raises(FileExistsError):
        voprf.write_keys(kp, sk_path, pk_path)
    voprf.write_keys(voprf.setup(b"g"), sk_path, pk_path, force=True)
    assert voprf.load_secret_key(sk_path) != kp
    pk_path.write_bytes(b"garbage")
    with pytest.raises(GroupError):
        voprf.load_public_key(pk_path)
