"""Counter-based SplitMix64 generator.

Output ``n`` (n = 1, 2, ...) of a stream with key ``K`` is
``mix64(K + n * 0x9E3779B97F4A7C15 mod 2**64)`` where ``mix64`` is the
SplitMix64 finaliser::

    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)

Doubles take the top 53 bits: ``(x >> 11) * 2**-53``. The key of a
placement stream is ``mix64(mix64(seed) ^ fnv1a64(subject_id) ^ (index *
0xD1B54A32D192ED03))`` so every (subject, placement) pair draws from an
independent, reproducible stream.
"""
from __future__ import annotations

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
INDEX_MULT = 0xD1B54A32D192ED03
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def fnv1a64(text: str) -> int:
    h = FNV_OFFSET
    for b in text.encode("utf-8"):
        h = ((h ^ b) * FNV_PRIME) & MASK64
    return h


def stream_key(seed: int, subject_id: str, index: int) -> int:
    return mix64(mix64(seed & MASK64) ^ fnv1a64(subject_id) ^ ((index * INDEX_MULT) & MASK64))


class CounterRng:
    def __init__(self, key: int):
        self.key = key & MASK64
        self.counter = 0

    @classmethod
    def for_placement(cls, seed: int, subject_id: str, index: int) -> "CounterRng":
        return cls(stream_key(seed, subject_id, index))

    def next_u64(self) -> int:
        self.counter += 1
        return mix64(self.key + self.counter * GOLDEN_GAMMA)

    def random(self) -> float:
        """Uniform double in [0, 1)."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def integers(self, lo: int, hi: int) -> int:
        """Uniform integer in the closed range [lo, hi]."""
        span = hi - lo + 1
        return lo + int(self.random() * span)

    def choice_sign(self) -> int:
        return 1 if self.next_u64() >> 63 else -1
