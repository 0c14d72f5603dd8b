"""Seeded random streams.

Backed by numpy's PCG64, whose output is documented and identical across
platforms for a given seed. Child streams are derived with splitmix64 so
subsystem draws stay independent of each other's consumption order.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(state: int) -> int:
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


class Rng:
    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def child(self, tag: int) -> "Rng":
        """Independent stream derived from (seed, tag)."""
        return Rng(splitmix64(self.seed ^ splitmix64(tag & _MASK)))

    def integers(self, low: int, high: int) -> int:
        """Uniform integer in [low, high)."""
        return int(self._gen.integers(low, high))

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        out = self._gen.uniform(low, high, size)
        return float(out) if size is None else out

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None):
        out = self._gen.normal(loc, scale, size)
        return float(out) if size is None else out

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)
