"""Portable counter-based random numbers.

splitmix64 is used both as a stream generator and as a 64-bit mixing hash.
Because the state advances by a fixed increment, the n-th output is a pure
function of (seed, n), which lets whole blocks be generated with vectorized
uint64 arithmetic while staying bit-compatible with a scalar implementation.
"""

from __future__ import annotations

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN_GAMMA = 0x9E3779B97F4A7C15

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3

_GAMMA = np.uint64(GOLDEN_GAMMA)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def mix64(z: int) -> int:
    """splitmix64 finalizer on a Python int."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def fnv1a64(data: bytes | str) -> int:
    if isinstance(data, str):
        data = data.encode("utf-8")
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & MASK64
    return h


def hash_string(text: str) -> int:
    """Stable 64-bit hash: FNV-1a followed by the splitmix64 finalizer."""
    return mix64(fnv1a64(text))


def derive_seed(seed: int, stream: int) -> int:
    return mix64((seed & MASK64) ^ mix64(stream))


class Prng:
    """splitmix64 stream with uniform and Box-Muller Gaussian helpers.

    ``Prng(seed).u64(n)`` returns the next ``n`` outputs; drawing ``a`` then
    ``b`` values gives exactly the same stream as drawing ``a + b`` at once.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & MASK64
        self.counter = 0

    def u64(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            state = np.uint64(self.seed) + idx * _GAMMA
            return _mix64_array(state)

    def next_u64(self) -> int:
        return int(self.u64(1)[0])

    def uniform(self, shape=(), low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """Doubles in [low, high) built from the top 53 bits."""
        n = int(np.prod(shape, dtype=np.int64))
        u = (self.u64(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        out = low + (high - low) * u
        return out.reshape(shape)

    def normal(self, shape=(), mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        """Box-Muller on consecutive output pairs; both branches are used."""
        n = int(np.prod(shape, dtype=np.int64))
        pairs = (n + 1) // 2
        u = self.uniform((pairs, 2))
        u1 = 1.0 - u[:, 0]  # (0, 1], keeps log finite
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u[:, 1]
        z = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1).reshape(-1)[:n]
        return (mean + std * z).reshape(shape)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        """Integers in [low, high) via floor(uniform * span)."""
        span = high - low
        if span <= 0:
            raise ValueError(f"empty integer range [{low}, {high})")
        u = self.uniform(shape)
        return (low + np.floor(u * span)).astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of range(n) driven by this stream."""
        out = np.arange(n, dtype=np.int64)
        if n < 2:
            return out
        draws = self.uniform((n - 1,))
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = int(draws[k] * (i + 1))
            out[i], out[j] = out[j], out[i]
        return out

    def choice(self, n: int, p=None) -> int:
        u = float(self.uniform((1,))[0])
        if p is None:
            return min(int(u * n), n - 1)
        cdf = np.cumsum(np.asarray(p, dtype=np.float64))
        cdf /= cdf[-1]
        return int(min(np.searchsorted(cdf, u, side="right"), n - 1))
