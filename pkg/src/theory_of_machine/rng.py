"""SplitMix64 generator and seed mixing.

Every random draw in the package goes through this module so that fleets,
excitations, initial weights and window samples are reproducible from a
single integer.
"""

from __future__ import annotations

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_INV_2_53 = 1.0 / (1 << 53)


def mix64(z: int) -> int:
    """SplitMix64 output finalizer (a bijection on 64-bit integers)."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def mix_seed(*parts: int) -> int:
    """Fold integers into one 64-bit seed.

    ``h = 0; for p in parts: h = mix64(h + GOLDEN_GAMMA ^ p)`` (``+`` binds
    tighter than ``^``), all modulo 2**64.
    """
    h = 0
    for p in parts:
        h = mix64(((h + GOLDEN_GAMMA) & MASK64) ^ (p & MASK64))
    return h


class SplitMix64:
    """Sebastiano Vigna's SplitMix64 stream."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return mix64(self.state)

    def random(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * _INV_2_53

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def randbelow(self, n: int) -> int:
        """Integer in [0, n) by rejection, so there is no modulo bias."""
        if n <= 0:
            raise ValueError(f"randbelow needs n > 0, got {n}")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def integers(self, lo: int, hi: int) -> int:
        """Integer in [lo, hi] inclusive."""
        return lo + self.randbelow(hi - lo + 1)

    def uniform_array(self, count: int, lo: float, hi: float) -> list[float]:
        return [self.uniform(lo, hi) for _ in range(count)]
