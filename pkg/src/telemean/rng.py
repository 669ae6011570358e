"""Deterministic random streams for reproducible experiments.

Every stochastic component in this package draws from a RandomStream, a thin
wrapper around numpy's counter-based Philox generator. The same 64-bit seed
yields the same draw sequence on every platform, and child streams derived
from (seed, index) are independent, so runs are replayable regardless of
execution order.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def _mix64(z: int) -> int:
    # splitmix64 finalizer: full-avalanche mixing of a 64-bit word
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, index: int) -> int:
    """Deterministically derive an independent child seed from (seed, index)."""
    if index < 0:
        raise ValueError("index must be non-negative")
    return _mix64((seed & _MASK64) ^ _mix64(index + 1))


class RandomStream:
    """Seeded stream of uniform variates backed by the Philox generator."""

    def __init__(self, seed: int) -> None:
        self.seed = int(seed) & _MASK64
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def random(self, size: int | None = None):
        """Uniform draw(s) in [0, 1): a float for size=None, else an array."""
        return self._gen.random(size)

    def integers(self, low: int, high: int, size: int | None = None):
        """Uniform integer draw(s) in [low, high)."""
        return self._gen.integers(low, high, size=size)

    def bit(self, p_one: float) -> int:
        """One Bernoulli draw: 1 with probability p_one."""
        return int(self._gen.random() < p_one)

    def child(self, index: int) -> "RandomStream":
        """Independent stream number `index` derived from this stream's seed."""
        return RandomStream(derive_seed(self.seed, index))

    def __repr__(self) -> str:
        return f"RandomStream(seed={self.seed})"
