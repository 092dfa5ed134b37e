"""Paillier cryptosystem: keygen, encrypt/decrypt and the two homomorphic ops.

Uses the g = n+1 variant, which turns g**m mod n^2 into (1 + m*n) mod n^2
and keeps lambda = phi(n), mu = phi(n)^-1 mod n. Decryption goes through
the CRT split over p^2 and q^2 when the prime factors are at hand.

Key material and ciphertexts are immutable; encryption takes an explicit
entropy source per call, so there is no hidden shared state and everything
is reproducible under a seeded rng. 512-bit keys are allowed only with
``test_mode=True`` — they are fine for correctness tests and useless for
security.
"""

import hashlib
import math
import random
from dataclasses import dataclass, field
from typing import Optional, Tuple

from . import _modmath
from ._modmath import invert, mulmod, next_prime, powmod

SUPPORTED_BITS = (512, 1024, 2048)
PRODUCTION_MIN_BITS = 1024


class KeyMismatchError(ValueError):
    """Operation combined ciphertexts or keys from different key pairs."""


@dataclass(frozen=True)
class PublicKey:
    n: int
    g: int
    key_id: bytes
    n_sq: int = field(repr=False, default=0)

    def __post_init__(self):
        object.__setattr__(self, "n_sq", self.n * self.n)

    @property
    def bits(self) -> int:
        return self.n.bit_length()


@dataclass(frozen=True)
class SecretKey:
    lam: int
    mu: int
    key_id: bytes
    n: int
    # prime factors kept for CRT decryption; never serialized
    p: int = field(repr=False, default=0)
    q: int = field(repr=False, default=0)

    def __post_init__(self):
        if self.p and self.q:
            object.__setattr__(self, "_crt", _CrtContext(self.p, self.q))
        else:
            object.__setattr__(self, "_crt", None)


class _CrtContext:
    """Precomputed tables for decryption modulo p^2 and q^2 separately."""

    def __init__(self, p: int, q: int):
        mpz = _modmath.MPZ
        n = p * q
        self.p, self.q = mpz(p), mpz(q)
        self.p_sq, self.q_sq = self.p * self.p, self.q * self.q
        self.p_minus_1, self.q_minus_1 = self.p - 1, self.q - 1
        self.p_inv_q = _modmath.invert_raw(self.p, self.q)
        g = mpz(n + 1)
        self.hp = _modmath.invert_raw(self._l(_modmath.powmod_raw(g, self.p_minus_1, self.p_sq), self.p), self.p)
        self.hq = _modmath.invert_raw(self._l(_modmath.powmod_raw(g, self.q_minus_1, self.q_sq), self.q), self.q)

    @staticmethod
    def _l(u, m):
        return (u - 1) // m

    def decrypt(self, c: int) -> int:
        powmod = _modmath.powmod_raw
        mp = self._l(powmod(c % self.p_sq, self.p_minus_1, self.p_sq), self.p) * self.hp % self.p
        mq = self._l(powmod(c % self.q_sq, self.q_minus_1, self.q_sq), self.q) * self.hq % self.q
        return int(mp + self.p * ((mq - mp) * self.p_inv_q % self.q))


@dataclass(frozen=True)
class Ciphertext:
    value: int
    key_id: bytes
    pk: PublicKey = field(repr=False, compare=False)


def _derive_key_id(n: int) -> bytes:
    return hashlib.sha256(n.to_bytes((n.bit_length() + 7) // 8, "big")).digest()[:8]


def _gen_prime(bits: int, rng: random.Random) -> int:
    # setting the top two bits guarantees p*q has exactly 2*bits bits
    cand = rng.getrandbits(bits) | (3 << (bits - 2)) | 1
    return next_prime(cand - 1)


def keygen(bits: int, rng: random.Random, test_mode: bool = False) -> Tuple[PublicKey, SecretKey]:
    """Generate a key pair with an n of exactly ``bits`` bits.

    Deterministic for a seeded rng. 512-bit keys require test_mode.
    """
    if bits not in SUPPORTED_BITS:
        raise ValueError(f"unsupported key size {bits}; choose from {SUPPORTED_BITS}")
    if bits < PRODUCTION_MIN_BITS and not test_mode:
        raise ValueError(f"{bits}-bit keys are only permitted in test mode")
    while True:
        p = _gen_prime(bits // 2, rng)
        q = _gen_prime(bits // 2, rng)
        if p == q:
            continue
        n = p * q
        if n.bit_length() == bits:
            break
    g = n + 1
    lam = (p - 1) * (q - 1)
    mu = invert(lam, n)
    key_id = _derive_key_id(n)
    return PublicKey(n, g, key_id), SecretKey(lam, mu, key_id, n, p, q)


def encrypt(pk: PublicKey, m: int, rng: random.Random, obfuscator: Optional[int] = None) -> Ciphertext:
    """Standard Paillier encryption (1 + m*n) * r^n mod n^2 with fresh r.

    ``obfuscator`` may supply a precomputed r^n mod n^2 (see ObfuscatorPool);
    otherwise r is drawn from rng and raised to n.
    """
    if not 0 <= m < pk.n:
        raise ValueError(f"plaintext out of range [0, n): {m}")
    raw = (1 + m * pk.n) % pk.n_sq
    if obfuscator is None:
        while True:
            r = rng.randrange(1, pk.n)
            if math.gcd(r, pk.n) == 1:
                break
        obfuscator = powmod(r, pk.n, pk.n_sq)
    return Ciphertext(mulmod(raw, obfuscator, pk.n_sq), pk.key_id, pk)


def decrypt(sk: SecretKey, ct: Ciphertext) -> int:
    """Decrypt to the plaintext residue in [0, n)."""
    if ct.key_id != sk.key_id:
        raise KeyMismatchError("ciphertext does not belong to this secret key")
    crt = getattr(sk, "_crt", None)
    if crt is not None:
        return crt.decrypt(ct.value)
    n_sq = sk.n * sk.n
    u = powmod(ct.value, sk.lam, n_sq)
    return (u - 1) // sk.n * sk.mu % sk.n


def add_ct(x: Ciphertext, y: Ciphertext) -> Ciphertext:
    """Homomorphic addition: ciphertext of (m_x + m_y) mod n."""
    if x.key_id != y.key_id:
        raise KeyMismatchError("cannot add ciphertexts under different keys")
    return Ciphertext(mulmod(x.value, y.value, x.pk.n_sq), x.key_id, x.pk)


def mul_scalar(x: Ciphertext, s: int) -> Ciphertext:
    """Homomorphic scalar multiplication: ciphertext of m*s mod n.

    Literal contract: computes x.value**s mod n^2 for s in [0, n).
    """
    if not 0 <= s < x.pk.n:
        raise ValueError(f"scalar out of range [0, n): {s}")
    return Ciphertext(powmod(x.value, s, x.pk.n_sq), x.key_id, x.pk)


def mul_scalar_signed(x: Ciphertext, s: int) -> Ciphertext:
    """Scalar multiplication taking a signed scalar with |s| < n/2.

    Negative scalars go through the modular inverse of the ciphertext, which
    keeps the exponent small; the result decrypts identically to
    mul_scalar(x, s mod n) but is a different ciphertext value.
    """
    if abs(s) >= x.pk.n // 2:
        raise ValueError("signed scalar magnitude exceeds n/2")
    return Ciphertext(powmod(x.value, s, x.pk.n_sq), x.key_id, x.pk)


class ObfuscatorPool:
    """Seeded pool of precomputed r^n values for high-throughput encryption.

    A fresh obfuscator is the product of ``subset`` random pool entries,
    which costs a handful of modular multiplications instead of a full
    n-bit exponentiation. This is a test-mode throughput device: the
    obfuscation distribution is weaker than a uniform fresh r^n, which is
    irrelevant for 512-bit test keys but not acceptable in production mode.
    """

    def __init__(self, pk: PublicKey, rng: random.Random, size: int = 128, subset: int = 4):
        if size < subset or subset < 2:
            raise ValueError("pool must be larger than the subset size")
        if size & (size - 1):
            raise ValueError("pool size must be a power of two")
        self.pk = pk
        self.subset = subset
        self._n_sq = _modmath.MPZ(pk.n_sq)
        self._idx_bits = (size - 1).bit_length()
        self._idx_mask = size - 1
        self._pool = []
        while len(self._pool) < size:
            r = rng.randrange(1, pk.n)
            if math.gcd(r, pk.n) == 1:
                self._pool.append(_modmath.powmod_raw(_modmath.MPZ(r), pk.n, self._n_sq))

    def draw(self, rng: random.Random):
        """Product of `subset` random pool entries (an mpz on the fast backend)."""
        picks = rng.getrandbits(self._idx_bits * self.subset)
        acc = self._pool[picks & self._idx_mask]
        for _ in range(self.subset - 1):
            picks >>= self._idx_bits
            acc = acc * self._pool[picks & self._idx_mask] % self._n_sq
        return acc


# --- serialization -----------------------------------------------------------

KEY_ID_LEN = 8


def int_to_lp_bytes(v: int) -> bytes:
    """Minimal big-endian bytes with a 4-byte big-endian length prefix."""
    if v < 0:
        raise ValueError("only non-negative integers serialize")
    raw = v.to_bytes((v.bit_length() + 7) // 8 or 1, "big")
    return len(raw).to_bytes(4, "big") + raw


def int_from_lp_bytes(buf: bytes, offset: int = 0) -> Tuple[int, int]:
    """Inverse of int_to_lp_bytes; returns (value, next_offset)."""
    if len(buf) < offset + 4:
        raise ValueError("truncated length prefix")
    length = int.from_bytes(buf[offset : offset + 4], "big")
    end = offset + 4 + length
    if len(buf) < end:
        raise ValueError("truncated integer body")
    return int.from_bytes(buf[offset + 4 : end], "big"), end


def ciphertext_to_bytes(ct: Ciphertext) -> bytes:
    return int_to_lp_bytes(ct.value)


def ciphertext_from_bytes(buf: bytes, pk: PublicKey, offset: int = 0) -> Tuple[Ciphertext, int]:
    value, end = int_from_lp_bytes(buf, offset)
    return Ciphertext(value, pk.key_id, pk), end


def backend_name() -> str:
    """Which modular-arithmetic backend is active ('gmpy2' or 'python')."""
    return _modmath.BACKEND
