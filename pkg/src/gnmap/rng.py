"""Deterministic, platform-independent random number generation.

Everything random in this package flows from a single 64-bit root seed
through `derive_seed(root, label)`, so any run is reproducible from the
seeds recorded in its manifest.

The generator is xorshift64* with the standard constants (shifts 12, 25, 27
and output multiplier 0x2545F4914F6CDD1D).  Seeds are conditioned through
one round of splitmix64 so that nearby integer seeds (root, root+1, ...)
produce unrelated streams.  All arithmetic is in Python integers masked to
64 bits, identical on every platform.
"""

from __future__ import annotations

import math

_MASK64 = (1 << 64) - 1
_XORSHIFT_MULT = 0x2545F4914F6CDD1D
_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def splitmix64(x: int) -> int:
    """One splitmix64 step; used for seed conditioning and derivation."""
    x = (x + _SPLITMIX_GAMMA) & _MASK64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _MASK64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _MASK64
    x ^= x >> 31
    return x


def derive_seed(root: int, label: str) -> int:
    """Derive a stream seed from a root seed and a purpose label.

    The label is hashed with 64-bit FNV-1a, xored into the root, and the
    result conditioned with splitmix64.  Distinct labels give independent
    streams for the same root.
    """
    h = _FNV_OFFSET
    for byte in label.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return splitmix64((root & _MASK64) ^ h)


class Rng:
    """xorshift64* stream with uniform, integer, normal and shuffle helpers."""

    def __init__(self, seed: int):
        state = splitmix64(seed & _MASK64)
        # xorshift state must be nonzero
        self._state = state if state != 0 else _SPLITMIX_GAMMA
        self._spare_normal: float | None = None

    def next_u64(self) -> int:
        x = self._state
        x ^= (x >> 12)
        x = (x ^ (x << 25)) & _MASK64
        x ^= (x >> 27)
        self._state = x
        return (x * _XORSHIFT_MULT) & _MASK64

    def uniform(self) -> float:
        """Uniform float in [0, 1) with 53 random mantissa bits."""
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n); unbiased via rejection sampling."""
        if n <= 0:
            raise ValueError(f"randint requires n > 0, got {n}")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            r = self.next_u64()
            if r < limit:
                return r % n

    def randrange(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi] inclusive."""
        return lo + self.randint(hi - lo + 1)

    def normal(self, sigma: float = 1.0) -> float:
        """Standard Box-Muller normal draw, scaled by sigma."""
        if self._spare_normal is not None:
            z = self._spare_normal
            self._spare_normal = None
            return z * sigma
        u1 = 1.0 - self.uniform()  # in (0, 1], keeps log finite
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log(u1))
        theta = 2.0 * math.pi * u2
        self._spare_normal = r * math.sin(theta)
        return r * math.cos(theta) * sigma

    def normals(self, count: int, sigma: float = 1.0) -> list[float]:
        return [self.normal(sigma) for _ in range(count)]

    def sample_prefix(self, n: int, k: int) -> list[int]:
        """First k entries of a Fisher-Yates shuffle of range(n), unsorted.

        Taking the prefix of a full uniform shuffle makes every k-subset
        (and every ordering of it) equally likely.
        """
        if not 0 <= k <= n:
            raise ValueError(f"need 0 <= k <= n, got k={k}, n={n}")
        idx = list(range(n))
        for i in range(k):
            j = i + self.randint(n - i)
            idx[i], idx[j] = idx[j], idx[i]
        return idx[:k]

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        n = len(items)
        for i in range(n - 1):
            j = i + self.randint(n - i)
            items[i], items[j] = items[j], items[i]
