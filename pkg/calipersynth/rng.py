"""Portable counter-based random numbers for the simulations.

Draw i of a stream is the SplitMix64 finalizer applied to
key + GOLDEN * (counter + i) in wrapping 64-bit arithmetic, where the key is
derived from (seed, stream). Any trial can be regenerated in isolation, and the
stream does not depend on numpy's generator or on how trials are scheduled.

Uniforms take the top 53 bits: (u >> 11) * 2**-53, in [0, 1).
Normals use Box-Muller on consecutive uniform pairs (u1, u2):
    r = sqrt(-2 log(1 - u1)),  z0 = r cos(2 pi u2),  z1 = r sin(2 pi u2)
and are emitted interleaved as [z0, z1, z0, z1, ...]; an odd request drops
the final z1.
"""
import numpy as np

from .errors import ConfigError

MASK64 = (1 << 64) - 1
GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer over a uint64 array."""
    z = (z ^ (z >> np.uint64(30))) * MIX1
    z = (z ^ (z >> np.uint64(27))) * MIX2
    return z ^ (z >> np.uint64(31))


def _as_u64(value: int) -> np.ndarray:
    return np.array([int(value) & MASK64], dtype=np.uint64)


class CounterRNG:
    """Stream of reproducible draws identified by (seed, stream)."""

    def __init__(self, seed: int, stream: int = 0):
        if seed < 0 or stream < 0:
            raise ConfigError("seed and stream must be non-negative integers")
        self.seed = int(seed)
        self.stream = int(stream)
        self.key = _mix(_mix(_as_u64(seed)) ^ _as_u64(stream))[0]
        self.counter = 0

    def bits(self, n: int) -> np.ndarray:
        """n raw 64-bit outputs; advances the counter by n."""
        counters = (np.arange(n, dtype=np.uint64) + np.uint64(self.counter)) * GOLDEN
        self.counter += n
        return _mix(counters + self.key)

    def uniform(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        u = (self.bits(n) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
        if low == 0.0 and high == 1.0:
            return u
        return low + (high - low) * u

    def normal(self, n: int, loc: float = 0.0, scale: float = 1.0) -> np.ndarray:
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs)
        radius = np.sqrt(-2.0 * np.log1p(-u[0::2]))
        angle = 2.0 * np.pi * u[1::2]
        z = np.empty(2 * pairs)
        z[0::2] = radius * np.cos(angle)
        z[1::2] = radius * np.sin(angle)
        return loc + scale * z[:n]
