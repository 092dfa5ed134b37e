"""Signed fixed-point encoding of reals into the Paillier plaintext space.

encode(v) = round(v * 2^frac_bits) mod n, with the upper half of [0, n)
standing in for negatives. The decodable magnitude is capped at
n / 2^(frac_bits+2): two scale levels plus a sign bit of headroom, enough
for exactly one encoded-scalar multiplication per ciphertext before
decryption. Division cannot happen under encryption, so the post-product
rescale is a plaintext operation applied after decrypt.
"""

import math
from dataclasses import dataclass

DEFAULT_FRAC_BITS = 32


class OverflowEncodingError(ValueError):
    """Value magnitude exceeds the codec's headroom bound."""


@dataclass(frozen=True)
class FixedPointCodec:
    modulus: int
    frac_bits: int = DEFAULT_FRAC_BITS

    def __post_init__(self):
        if self.frac_bits < 1:
            raise ValueError("frac_bits must be at least 1")
        if self.modulus <= 1 << (self.frac_bits + 4):
            raise ValueError("modulus too small for the requested precision")

    @property
    def resolution(self) -> float:
        return 2.0 ** -self.frac_bits

    @property
    def max_magnitude(self) -> float:
        """Largest encodable |v|: n / 2^(frac_bits+2)."""
        return self.modulus / (1 << (self.frac_bits + 2))

    def encode(self, v: float) -> int:
        if not math.isfinite(v):
            raise OverflowEncodingError(f"cannot encode non-finite value {v}")
        if abs(v) >= self.max_magnitude:
            raise OverflowEncodingError(
                f"|{v}| exceeds codec headroom {self.max_magnitude:.3e}"
            )
        scaled = round(v * (1 << self.frac_bits))
        return scaled % self.modulus

    def to_signed(self, m: int) -> int:
        """Map a residue in [0, n) to its signed representative."""
        if not 0 <= m < self.modulus:
            raise ValueError("residue out of range")
        return m - self.modulus if m > self.modulus // 2 else m

    def decode(self, m: int) -> float:
        signed = self.to_signed(m)
        if abs(signed) > self.modulus // 4:
            raise OverflowEncodingError(
                "residue magnitude exceeds headroom; scale mismatch or overflow"
            )
        return signed / (1 << self.frac_bits)

    def rescale_after_product(self, m: int) -> int:
        """Undo one extra 2^frac_bits factor with round-to-nearest.

        Applied on plaintext after decrypting a ciphertext that was
        multiplied by one encoded scalar (value then carries 2*frac_bits of
        scale). Returns the re-wrapped single-scale residue.
        """
        signed = self.to_signed(m)
        half = 1 << (self.frac_bits - 1)
        if signed >= 0:
            scaled = (signed + half) >> self.frac_bits
        else:
            scaled = -((-signed + half) >> self.frac_bits)
        return scaled % self.modulus

    def lift(self, m: int) -> int:
        """Raise a single-scale residue to product scale (multiply by 2^fb)."""
        signed = self.to_signed(m)
        return (signed << self.frac_bits) % self.modulus

    def decode_product(self, m: int) -> float:
        """Decode a residue carrying 2*frac_bits of scale."""
        signed = self.to_signed(m)
        if abs(signed) > self.modulus // 4:
            raise OverflowEncodingError(
                "residue magnitude exceeds headroom; scale mismatch or overflow"
            )
        return signed / float(1 << (2 * self.frac_bits))
