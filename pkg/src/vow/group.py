"""Ristretto255 group and scalar helpers backed by libsodium (via rbcl).

Group elements travel as canonical 32-byte encodings (``bytes``); scalars are
Python ints reduced modulo :data:`GROUP_ORDER` and encoded little-endian.
Operations that touch secret scalars go through libsodium's constant-time
routines.
"""
from __future__ import annotations

import hashlib
import secrets

import rbcl

GROUP_ORDER = 2**252 + 27742317777372353535851937790883648493
ELEMENT_BYTES = 32
SCALAR_BYTES = 32
IDENTITY = bytes(ELEMENT_BYTES)
GENERATOR = bytes.fromhex(
    "e2f2ae0a6abc4e71a884a961c500515f58e30b6aa582dd8db6a65945e08d2d76"
)

H1_DST = b"VOW-v1-H1"


class GroupError(ValueError):
    """Malformed, non-canonical or otherwise unusable group data."""


def i2osp(value: int, length: int) -> bytes:
    if value < 0 or value >= 1 << (8 * length):
        raise ValueError(f"{value} does not fit in {length} bytes")
    return value.to_bytes(length, "big")


def expand_message_xmd(msg: bytes, dst: bytes, len_in_bytes: int) -> bytes:
    """RFC 9380 expand_message_xmd instantiated with SHA-512."""
    b_in_bytes, r_in_bytes = 64, 128
    ell = -(-len_in_bytes // b_in_bytes)
    if ell > 255 or len_in_bytes > 65535 or len(dst) > 255:
        raise ValueError("expand_message_xmd: requested output too long")
    dst_prime = dst + i2osp(len(dst), 1)
    b0 = hashlib.sha512(
        bytes(r_in_bytes) + msg + i2osp(len_in_bytes, 2) + b"\x00" + dst_prime
    ).digest()
    blocks = [hashlib.sha512(b0 + b"\x01" + dst_prime).digest()]
    for i in range(2, ell + 1):
        mixed = bytes(x ^ y for x, y in zip(b0, blocks[-1]))
        blocks.append(hashlib.sha512(mixed + i2osp(i, 1) + dst_prime).digest())
    return b"".join(blocks)[:len_in_bytes]


# -- scalars -----------------------------------------------------------------

def scalar_to_bytes(s: int) -> bytes:
    return (s % GROUP_ORDER).to_bytes(SCALAR_BYTES, "little")


def scalar_from_bytes(data: bytes) -> int:
    """Decode a canonical scalar; values >= the group order are rejected."""
    if len(data) != SCALAR_BYTES:
        raise GroupError(f"scalar must be {SCALAR_BYTES} bytes, got {len(data)}")
    s = int.from_bytes(data, "little")
    if s >= GROUP_ORDER:
        raise GroupError("non-canonical scalar encoding")
    return s


def hash_to_scalar(msg: bytes, dst: bytes) -> int:
    return int.from_bytes(expand_message_xmd(msg, dst, 64), "little") % GROUP_ORDER


def _draw_bytes(rng, n: int) -> bytes:
    if hasattr(rng, "randbytes"):
        return rng.randbytes(n)
    return rng.bytes(n)  # numpy Generator


def random_scalar(rng=None) -> int:
    """Uniform nonzero scalar.

    ``rng`` may be a ``random.Random`` or ``numpy.random.Generator`` for
    reproducible runs; by default the OS CSPRNG is used.
    """
    while True:
        if rng is None:
            s = int.from_bytes(secrets.token_bytes(64), "little") % GROUP_ORDER
        else:
            s = int.from_bytes(_draw_bytes(rng, 64), "little") % GROUP_ORDER
        if s:
            return s


def scalar_mul(a: int, b: int) -> int:
    return scalar_from_bytes(
        rbcl.crypto_core_ristretto255_scalar_mul(scalar_to_bytes(a), scalar_to_bytes(b))
    )


def scalar_sub(a: int, b: int) -> int:
    return scalar_from_bytes(
        rbcl.crypto_core_ristretto255_scalar_sub(scalar_to_bytes(a), scalar_to_bytes(b))
    )


def scalar_invert(s: int) -> int:
    if s % GROUP_ORDER == 0:
        raise GroupError("zero scalar has no inverse")
    return scalar_from_bytes(rbcl.crypto_core_ristretto255_scalar_invert(scalar_to_bytes(s)))


# -- elements ----------------------------------------------------------------

def is_identity(element: bytes) -> bool:
    return element == IDENTITY


def decode_element(data: bytes, allow_identity: bool = False) -> bytes:
    """Validate an encoded element and return it unchanged.

    Non-canonical encodings are rejected; the identity is rejected unless
    ``allow_identity`` is set.
    """
    if not isinstance(data, (bytes, bytearray)) or len(data) != ELEMENT_BYTES:
        raise GroupError("group element must be 32 bytes")
    data = bytes(data)
    # libsodium ignores bit 255, which RFC 9496 requires to be clear
    if data[31] & 0x80 or not rbcl.crypto_core_ristretto255_is_valid_point(data):
        raise GroupError("invalid or non-canonical group element")
    if not allow_identity and data == IDENTITY:
        raise GroupError("identity element not allowed here")
    return data


def hash_to_group(msg: bytes, dst: bytes = H1_DST) -> bytes:
    """hash_to_ristretto255 (RFC 9380) with the given domain-separation tag."""
    return rbcl.crypto_core_ristretto255_from_hash(expand_message_xmd(msg, dst, 64))


def mul(s: int, element: bytes) -> bytes:
    """Constant-time ``element ^ s``; the result may be the identity."""
    return rbcl.crypto_scalarmult_ristretto255_allow_scalar_zero(scalar_to_bytes(s), element)


def mul_base(s: int) -> bytes:
    return rbcl.crypto_scalarmult_ristretto255_base_allow_scalar_zero(scalar_to_bytes(s))


def add(a: bytes, b: bytes) -> bytes:
    return rbcl.crypto_core_ristretto255_add(a, b)


def sub(a: bytes, b: bytes) -> bytes:
    return rbcl.crypto_core_ristretto255_sub(a, b)


def linear_combination(scalars, elements) -> bytes:
    """``sum(s_i * E_i)`` in additive notation (product of powers)."""
    acc = IDENTITY
    for s, e in zip(scalars, elements, strict=True):
        acc = add(acc, mul(s, e))
    return acc
