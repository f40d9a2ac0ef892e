"""SplitMix64 stream used by the randomized rounding algorithms.

SplitMix64 is counter based: the k-th output only depends on ``seed + k*GAMMA``,
so blocks of the stream can be generated with vectorized numpy arithmetic and
still agree bit-for-bit with the scalar recurrence.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_INV53 = 1.0 / (1 << 53)


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    """Deterministic 64-bit generator; ``seed`` is reduced modulo 2**64."""

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        self.counter = 0

    def next_u64(self) -> int:
        self.counter += 1
        return _mix((self.seed + self.counter * GAMMA) & MASK64)

    def random(self) -> float:
        return (self.next_u64() >> 11) * _INV53

    def u64_block(self, count: int) -> np.ndarray:
        """Next ``count`` raw outputs as a uint64 array (advances the stream)."""
        k = np.arange(self.counter + 1, self.counter + 1 + count, dtype=np.uint64)
        self.counter += count
        with np.errstate(over="ignore"):
            z = np.uint64(self.seed) + k * np.uint64(GAMMA)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
            z = z ^ (z >> np.uint64(31))
        return z

    def random_block(self, count: int) -> np.ndarray:
        """Next ``count`` uniforms in [0, 1) with 53-bit resolution."""
        return (self.u64_block(count) >> np.uint64(11)).astype(np.float64) * _INV53
