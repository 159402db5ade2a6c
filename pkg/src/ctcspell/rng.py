"""Seeded xorshift64* generator.

Every stochastic operation in the package takes one of these explicitly, so
two runs with the same seeds are bit-identical on any platform. The stream
is pure integer arithmetic; no dependence on numpy's RNG state.
"""
from __future__ import annotations

import hashlib
import math

import numpy as np

_MASK = (1 << 64) - 1
_MULT = 0x2545F4914F6CDD1D


def _splitmix64(x: int) -> int:
    # used only to spread a user seed into a full 64-bit state
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


class Rng:
    """xorshift64* stream with Box-Muller normals."""

    def __init__(self, seed: int):
        self._seed = int(seed)
        self._state = _splitmix64(self._seed & _MASK) or 0x9E3779B97F4A7C15
        self._spare_normal: float | None = None

    def derive(self, *keys) -> "Rng":
        """Independent child stream named by `keys`; does not consume state."""
        tag = "|".join([str(self._seed)] + [str(k) for k in keys])
        digest = hashlib.blake2b(tag.encode("utf-8"), digest_size=8).digest()
        return Rng(int.from_bytes(digest, "little"))

    def u64(self) -> int:
        x = self._state
        x ^= x >> 12
        x ^= (x << 25) & _MASK
        x ^= x >> 27
        self._state = x
        return (x * _MULT) & _MASK

    def uniform(self) -> float:
        """Uniform in [0, 1)."""
        return (self.u64() >> 11) * (1.0 / (1 << 53))

    def normal(self) -> float:
        if self._spare_normal is not None:
            z = self._spare_normal
            self._spare_normal = None
            return z
        u1 = 1.0 - self.uniform()  # (0, 1]
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log(u1))
        self._spare_normal = r * math.sin(2.0 * math.pi * u2)
        return r * math.cos(2.0 * math.pi * u2)

    def randint(self, n: int) -> int:
        """Integer in [0, n)."""
        if n <= 0:
            raise ValueError("randint needs n >= 1")
        return min(int(self.uniform() * n), n - 1)

    def choice_weighted(self, cumulative: list[float]) -> int:
        """Index into a nondecreasing cumulative weight list."""
        u = self.uniform() * cumulative[-1]
        lo, hi = 0, len(cumulative) - 1
        while lo < hi:
            mid = (lo + hi) // 2
            if cumulative[mid] <= u:
                lo = mid + 1
            else:
                hi = mid
        return lo

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]

    def uniforms(self, n: int) -> np.ndarray:
        return np.fromiter((self.uniform() for _ in range(n)), dtype=np.float64, count=n)

    def normals(self, shape) -> np.ndarray:
        if isinstance(shape, int):
            shape = (shape,)
        n = 1
        for s in shape:
            n *= s
        flat = np.fromiter((self.normal() for _ in range(n)), dtype=np.float64, count=n)
        return flat.reshape(shape)
