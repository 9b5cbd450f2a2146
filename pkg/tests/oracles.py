"""Independent reference computations used as test oracles.

Nothing here imports the package under test except for type-free plumbing;
each oracle recomputes its answer by a different route (pure-Python curve
arithmetic, exact rationals, brute force).
"""
from __future__ import annotations

import hashlib
from fractions import Fraction
from math import comb

# -- pure-Python ristretto255 --------------------------------------------

P = 2**255 - 19
Q = 2**252 + 27742317777372353535851937790883648493
D = (-121665 * pow(121666, -1, P)) % P
SQRT_M1 = 19681161376707505956807079304988542015446066515923890162744021073123829784752
SQRT_AD_MINUS_ONE = 25063068953384623474111414158702152701244531502492656460079210482610430750235
INVSQRT_A_MINUS_D = 54469307008909316920995813868745141605393597292927456921205312896311721017578
ONE_MINUS_D_SQ = (1 - D * D) % P
D_MINUS_ONE_SQ = (D - 1) ** 2 % P


def _neg(x):
    return x & 1


def _abs(x):
    return (-x) % P if _neg(x) else x


def sqrt_ratio_m1(u, v):
    v3 = v * v % P * v % P
    v7 = v3 * v3 % P * v % P
    r = u * v3 % P * pow(u * v7 % P, (P - 5) // 8, P) % P
    check = v * r % P * r % P
    correct = check == u % P
    flipped = check == (-u) % P
    flipped_i = check == (-u) * SQRT_M1 % P
    if flipped or flipped_i:
        r = r * SQRT_M1 % P
    return correct or flipped, _abs(r)


def decode(data: bytes):
    s = int.from_bytes(data, "little")
    if s >= P or _neg(s):
        return None
    ss = s * s % P
    u1 = (1 - ss) % P
    u2 = (1 + ss) % P
    u2_sqr = u2 * u2 % P
    v = (-(D * u1 % P * u1) - u2_sqr) % P
    was_square, invsqrt = sqrt_ratio_m1(1, v * u2_sqr % P)
    den_x = invsqrt * u2 % P
    den_y = invsqrt * den_x % P * v % P
    x = _abs(2 * s * den_x % P)
    y = u1 * den_y % P
    t = x * y % P
    if not was_square or _neg(t) or y == 0:
        return None
    return (x, y, 1, t)


def encode(pt) -> bytes:
    x0, y0, z0, t0 = pt
    u1 = (z0 + y0) * (z0 - y0) % P
    u2 = x0 * y0 % P
    _, invsqrt = sqrt_ratio_m1(1, u1 * u2 % P * u2 % P)
    den1 = invsqrt * u1 % P
    den2 = invsqrt * u2 % P
    z_inv = den1 * den2 % P * t0 % P
    ix0 = x0 * SQRT_M1 % P
    iy0 = y0 * SQRT_M1 % P
    enchanted = den1 * INVSQRT_A_MINUS_D % P
    rotate = _neg(t0 * z_inv % P)
    if rotate:
        x, y, den_inv = iy0, ix0, enchanted
    else:
        x, y, den_inv = x0, y0, den2
    if _neg(x * z_inv % P):
        y = (-y) % P
    s = _abs(den_inv * (z0 - y) % P)
    return s.to_bytes(32, "little")


def edwards_add(p1, p2):
    x1, y1, z1, t1 = p1
    x2, y2, z2, t2 = p2
    a = (y1 - x1) * (y2 - x2) % P
    b = (y1 + x1) * (y2 + x2) % P
    c = 2 * D * t1 % P * t2 % P
    d = 2 * z1 * z2 % P
    e, f, g, h = b - a, d - c, d + c, b + a
    return (e * f % P, g * h % P, f * g % P, e * h % P)


IDENTITY_PT = (0, 1, 1, 0)


def scalar_mult(k: int, pt):
    acc = IDENTITY_PT
    addend = pt
    k %= Q
    while k:
        if k & 1:
            acc = edwards_add(acc, addend)
        addend = edwards_add(addend, addend)
        k >>= 1
    return acc


def elligator(t):
    r = SQRT_M1 * t % P * t % P
    u = (r + 1) * ONE_MINUS_D_SQ % P
    v = (-1 - r * D) * (r + D) % P
    was_square, s = sqrt_ratio_m1(u, v)
    s_prime = (-_abs(s * t % P)) % P
    if not was_square:
        s = s_prime
    c = P - 1 if was_square else r
    n = (c * (r - 1) % P * D_MINUS_ONE_SQ - v) % P
    w0 = 2 * s * v % P
    w1 = n * SQRT_AD_MINUS_ONE % P
    w2 = (1 - s * s) % P
    w3 = (1 + s * s) % P
    return (w0 * w3 % P, w2 * w1 % P, w1 * w3 % P, w0 * w2 % P)


def from_uniform_bytes(b: bytes):
    r0 = int.from_bytes(b[:32], "little") % 2**255 % P
    r1 = int.from_bytes(b[32:64], "little") % 2**255 % P
    return edwards_add(elligator(r0), elligator(r1))


BASE = decode(bytes.fromhex("e2f2ae0a6abc4e71a884a961c500515f58e30b6aa582dd8db6a65945e08d2d76"))


def xmd_sha512(msg: bytes, dst: bytes, n: int) -> bytes:
    dst_prime = dst + bytes([len(dst)])
    b0 = hashlib.sha512(bytes(128) + msg + n.to_bytes(2, "big") + b"\x00" + dst_prime).digest()
    out = [hashlib.sha512(b0 + b"\x01" + dst_prime).digest()]
    i = 2
    while len(out) * 64 < n:
        out.append(hashlib.sha512(bytes(a ^ b for a, b in zip(b0, out[-1])) + bytes([i]) + dst_prime).digest())
        i += 1
    return b"".join(out)[:n]


def ref_hash_to_group(msg: bytes, dst: bytes = b"VOW-v1-H1") -> bytes:
    return encode(from_uniform_bytes(xmd_sha512(msg, dst, 64)))


def ref_evaluate(sk: int, x: bytes) -> bytes:
    """The 2HashDH PRF computed entirely with the pure-Python curve."""
    point = from_uniform_bytes(xmd_sha512(x, b"VOW-v1-H1", 64))
    unblinded = encode(scalar_mult(sk, point))
    return hashlib.sha256(
        len(x).to_bytes(2, "big") + x + (32).to_bytes(2, "big") + unblinded + b"VOW-v1-H2"
    ).digest()


# -- exact binomial tail ------------------------------------------------------

def binom_sf_fraction(g: int, n: int, gamma: Fraction) -> Fraction:
    """Pr(X >= g), X ~ Bin(n, gamma), as an exact rational."""
    a, b = gamma.numerator, gamma.denominator
    c = b - a
    num = sum(comb(n, i) * a**i * c ** (n - i) for i in range(g, n + 1))
    return Fraction(num, b**n)


# -- brute-force biased top-k -----------------------------------------------

def brute_topk(logits, k: int, delta: float, green):
    """Bias every logit, then sort by (-biased, id) and take k."""
    biased = [float(l) + delta if green[i] else float(l) for i, l in enumerate(logits)]
    order = sorted(range(len(biased)), key=lambda i: (-biased[i], i))[:k]
    return [(i, biased[i]) for i in order]


def binom_sf_table(n: int, gamma: Fraction) -> list[Fraction]:
    """``[Pr(X >= g) for g in 0..n]`` via exact suffix sums."""
    a, b = gamma.numerator, gamma.denominator
    c = b - a
    terms = [comb(n, i) * a**i * c ** (n - i) for i in range(n + 1)]
    out = [0] * (n + 2)
    for i in range(n, -1, -1):
        out[i] = out[i + 1] + terms[i]
    denom = b**n
    return [Fraction(v, denom) for v in out[: n + 1]]
