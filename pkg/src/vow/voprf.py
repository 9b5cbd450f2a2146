"""2HashDH verifiable oblivious PRF over ristretto255.

``F(sk, x) = H2(x, H1(x)^sk)``.  Clients blind ``H1(x)`` with a random
scalar, the key holder raises every blinded element to ``sk`` and attaches a
single Chaum-Pedersen DLEQ proof covering the whole batch, and the client
checks that proof against the public key before unblinding.
"""
from __future__ import annotations

import hashlib
import os
import stat
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from . import group
from .group import GroupError, i2osp

H2_TAG = b"VOW-v1-H2"
COMPOSITE_DST = b"VOW-v1-Composite"
CHALLENGE_DST = b"VOW-v1-Challenge"
KEYGEN_DST = b"VOW-v1-KeyGen"
KEY_MAGIC = b"VOWKEY01"
PROOF_BYTES = 64
OUTPUT_BYTES = 32


class VerificationError(Exception):
    """A DLEQ proof failed to validate; the evaluator misbehaved."""


@dataclass(frozen=True)
class KeyPair:
    sk: int
    pk: bytes

    def __post_init__(self):
        if not 0 < self.sk < group.GROUP_ORDER:
            raise GroupError("secret key must be a nonzero reduced scalar")
        if group.mul_base(self.sk) != self.pk:
            raise GroupError("public key does not match secret key")

    @classmethod
    def from_secret(cls, sk: int) -> "KeyPair":
        return cls(sk, group.mul_base(sk))


@dataclass(frozen=True)
class BlindingState:
    input_bytes: bytes
    r: int
    blinded: bytes


@dataclass(frozen=True)
class DleqProof:
    c: int
    s: int

    def to_bytes(self) -> bytes:
        return group.scalar_to_bytes(self.c) + group.scalar_to_bytes(self.s)

    @classmethod
    def from_bytes(cls, data: bytes) -> "DleqProof":
        if len(data) != PROOF_BYTES:
            raise GroupError(f"proof must be {PROOF_BYTES} bytes, got {len(data)}")
        return cls(group.scalar_from_bytes(data[:32]), group.scalar_from_bytes(data[32:]))


def setup(seed: bytes | None = None) -> KeyPair:
    """Generate a key pair; a fixed ``seed`` gives a deterministic key."""
    if seed is None:
        return KeyPair.from_secret(group.random_scalar())
    counter = 0
    while True:
        sk = group.hash_to_scalar(seed + i2osp(counter, 1), KEYGEN_DST)
        if sk:
            return KeyPair.from_secret(sk)
        counter += 1


def _h2(x: bytes, unblinded: bytes) -> bytes:
    return hashlib.sha256(
        i2osp(len(x), 2) + x + i2osp(len(unblinded), 2) + unblinded + H2_TAG
    ).digest()


def _check_input(x: bytes) -> None:
    if not x:
        raise ValueError("PRF input must be nonempty")
    if len(x) > 0xFFFF:
        raise ValueError("PRF input longer than 65535 bytes")


def evaluate(sk: int, x: bytes) -> bytes:
    """Unblinded PRF evaluation, for the key holder."""
    _check_input(x)
    return _h2(x, group.mul(sk, group.hash_to_group(x)))


def blind(x: bytes, rng=None) -> BlindingState:
    _check_input(x)
    point = group.hash_to_group(x)
    if group.is_identity(point):
        raise GroupError("input hashes to the identity element")
    r = group.random_scalar(rng)
    return BlindingState(x, r, group.mul(r, point))


def finalize(state: BlindingState, evaluated: bytes) -> bytes:
    """Unblind ``evaluated`` and hash. Does not check any proof."""
    group.decode_element(evaluated)
    return _h2(state.input_bytes, group.mul(group.scalar_invert(state.r), evaluated))


# -- batched DLEQ -----------------------------------------------------------

def composite_weights(pk: bytes, blinded: Sequence[bytes], evaluated: Sequence[bytes]) -> list[int]:
    """Per-position weights binding each (blinded, evaluated) pair to its index."""
    return [
        group.hash_to_scalar(pk + i2osp(i, 4) + b + e, COMPOSITE_DST)
        for i, (b, e) in enumerate(zip(blinded, evaluated, strict=True))
    ]


def _challenge(pk: bytes, m: bytes, z: bytes, t2: bytes, t3: bytes) -> int:
    return group.hash_to_scalar(group.GENERATOR + pk + m + z + t2 + t3, CHALLENGE_DST)


def _prove(keypair: KeyPair, blinded, evaluated, rng=None) -> DleqProof:
    weights = composite_weights(keypair.pk, blinded, evaluated)
    m = group.linear_combination(weights, blinded)
    z = group.mul(keypair.sk, m)
    t = group.random_scalar(rng)
    c = _challenge(keypair.pk, m, z, group.mul_base(t), group.mul(t, m))
    s = group.scalar_sub(t, group.scalar_mul(c, keypair.sk))
    return DleqProof(c, s)


def blind_evaluate_batch(
    keypair: KeyPair,
    blinded: Sequence[bytes],
    per_input_proofs: bool = False,
    rng=None,
) -> tuple[list[bytes], DleqProof | list[DleqProof]]:
    """Raise every blinded element to ``sk`` and prove it.

    By default one 64-byte proof covers the whole batch.  With
    ``per_input_proofs`` each element gets its own batch-of-one proof.
    """
    if not blinded:
        raise ValueError("empty batch")
    blinded = [group.decode_element(b) for b in blinded]
    evaluated = [group.mul(keypair.sk, b) for b in blinded]
    if per_input_proofs:
        return evaluated, [_prove(keypair, [b], [e], rng) for b, e in zip(blinded, evaluated)]
    return evaluated, _prove(keypair, blinded, evaluated, rng)


def verify_batch(pk: bytes, blinded: Sequence[bytes], evaluated: Sequence[bytes], proof: DleqProof) -> bool:
    """Check that ``evaluated[i] = blinded[i]^sk`` for the ``sk`` behind ``pk``."""
    if len(blinded) != len(evaluated):
        raise ValueError("blinded and evaluated lists differ in length")
    if not blinded:
        raise ValueError("empty batch")
    try:
        group.decode_element(pk)
        # server-supplied elements first: malformed responses fail fast
        for e in list(evaluated) + list(blinded):
            group.decode_element(e)
    except GroupError:
        return False
    if not (0 <= proof.c < group.GROUP_ORDER and 0 <= proof.s < group.GROUP_ORDER):
        return False
    weights = composite_weights(pk, blinded, evaluated)
    m = group.linear_combination(weights, blinded)
    z = group.linear_combination(weights, evaluated)
    t2 = group.add(group.mul_base(proof.s), group.mul(proof.c, pk))
    t3 = group.add(group.mul(proof.s, m), group.mul(proof.c, z))
    return _challenge(pk, m, z, t2, t3) == proof.c


def verify_and_finalize(
    pk: bytes,
    states: Sequence[BlindingState],
    evaluated: Sequence[bytes],
    proof: DleqProof | Sequence[DleqProof],
) -> list[bytes]:
    """Client-side step: verify the proof(s), then unblind every output.

    Raises :class:`VerificationError` if anything fails to check out.
    """
    blinded = [st.blinded for st in states]
    if len(evaluated) != len(blinded):
        raise VerificationError("evaluated count does not match request")
    if isinstance(proof, DleqProof):
        ok = verify_batch(pk, blinded, evaluated, proof)
    else:
        if len(proof) != len(blinded):
            raise VerificationError("proof count does not match request")
        ok = all(verify_batch(pk, [b], [e], p) for b, e, p in zip(blinded, evaluated, proof))
    if not ok:
        raise VerificationError("DLEQ proof rejected")
    return [finalize(st, e) for st, e in zip(states, evaluated)]


# -- key files --------------------------------------------------------------

def write_keys(keypair: KeyPair, sk_path: Path, pk_path: Path, force: bool = False) -> None:
    sk_path, pk_path = Path(sk_path), Path(pk_path)
    for p in (sk_path, pk_path):
        if p.exists() and not force:
            raise FileExistsError(f"{p} already exists (use --force to overwrite)")
    flags = os.O_WRONLY | os.O_CREAT | os.O_TRUNC
    fd = os.open(sk_path, flags, 0o600)
    with os.fdopen(fd, "wb") as fh:
        fh.write(KEY_MAGIC + group.scalar_to_bytes(keypair.sk))
    os.chmod(sk_path, stat.S_IRUSR | stat.S_IWUSR)
    pk_path.write_bytes(KEY_MAGIC + keypair.pk)


def _read_key_file(path: Path) -> bytes:
    data = Path(path).read_bytes()
    if len(data) != 40 or data[:8] != KEY_MAGIC:
        raise GroupError(f"{path}: not a VOW key file")
    return data[8:]


def load_secret_key(path: Path) -> KeyPair:
    sk = group.scalar_from_bytes(_read_key_file(path))
    if sk == 0:
        raise GroupError("zero secret key")
    return KeyPair.from_secret(sk)


def load_public_key(path: Path) -> bytes:
    return group.decode_element(_read_key_file(path))
