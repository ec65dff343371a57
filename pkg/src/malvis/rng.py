"""Seeded SplitMix64 generator used for every random decision in malvis.

The algorithm is fixed and must never change, because split manifests,
batch orders and initial weights are all derived from it.

State is a 64-bit counter. The k-th output (k = 1, 2, ...) of a generator
seeded with ``s`` is ``mix(s + k * 0x9E3779B97F4A7C15 mod 2**64)`` where::

    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)

(all arithmetic mod 2**64). Derived quantities:

* ``random()``: ``(u >> 11) * 2**-53``, a double in [0, 1).
* ``randbelow(n)``: draw ``u`` until ``u < 2**64 - (2**64 % n)``, return ``u % n``.
* ``shuffle(seq)``: Fisher-Yates from the last index down, swapping
  ``i`` with ``randbelow(i + 1)``.
* ``uniform(lo, hi, shape)``: ``lo + (hi - lo) * random()`` per element,
  filled in row-major order.
* ``derive_seed(seed, *keys)``: folds each integer key in with
  ``mix(state ^ key) + GAMMA`` so that sub-streams (epochs, layers) are
  independent of how many numbers earlier streams consumed.
"""
from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def derive_seed(seed: int, *keys: int) -> int:
    state = seed & MASK64
    for key in keys:
        state = (mix64(state ^ (key & MASK64)) + GAMMA) & MASK64
    return state


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GAMMA) & MASK64
        return mix64(self.state)

    def u64_array(self, n: int) -> np.ndarray:
        """Next ``n`` outputs as a uint64 array (same values as repeated next_u64)."""
        if n <= 0:
            return np.zeros(0, dtype=np.uint64)
        k = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + k * np.uint64(GAMMA)
            out = _mix64_array(z)
        self.state = (self.state + n * GAMMA) & MASK64
        return out

    def random(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def random_array(self, n: int) -> np.ndarray:
        return (self.u64_array(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        shape = (int(shape),) if np.isscalar(shape) else tuple(int(d) for d in shape)
        n = int(np.prod(shape, dtype=np.int64))
        return (low + (high - low) * self.random_array(n)).reshape(shape)

    def randbelow(self, n: int) -> int:
        if n <= 0:
            raise ValueError("randbelow needs n >= 1")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def permutation(self, n: int) -> list[int]:
        order = list(range(n))
        self.shuffle(order)
        return order
