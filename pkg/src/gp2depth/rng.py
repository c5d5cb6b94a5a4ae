"""Portable 64-bit pseudo random numbers.

Every random draw in the package goes through :class:`SplitMix64` so that
scenes, corruptions, initialisations and mixture draws are reproducible
bit-for-bit on any platform, independent of numpy's generator versions.

SplitMix64 (Steele, Lea & Flood 2014) advances a 64-bit counter by the
golden-ratio increment and passes it through an xorshift-multiply finaliser:

    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)

Output ``k`` is a pure function of ``seed + (k + 1) * increment``, which lets
whole blocks be generated with vectorised uint64 arithmetic (wrapping mod 2**64).
Uniform doubles take the top 53 bits: ``(z >> 11) * 2**-53``.
"""

from __future__ import annotations

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)
MASK64 = (1 << 64) - 1

_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / (1 << 53)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _S30)) * MIX1
    z = (z ^ (z >> _S27)) * MIX2
    return z ^ (z >> _S31)


def derive_seed(seed: int, *tags: int | str) -> int:
    """Deterministically derive an independent child seed from ``seed`` and tags."""
    state = int(seed) & MASK64
    for tag in tags:
        if isinstance(tag, str):
            value = 0
            for byte in tag.encode("utf-8"):
                value = (value * 131 + byte) & MASK64
        else:
            value = int(tag) & MASK64
        state = int(_mix(np.array([(state ^ value) + 0x9E3779B97F4A7C15 & MASK64], dtype=np.uint64))[0])
    return state


class SplitMix64:
    """Counter-based SplitMix64 stream with numpy-style convenience draws."""

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        self.counter = 0

    def next_uint64(self, n: int) -> np.ndarray:
        k = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            state = np.uint64(self.seed) + k * GOLDEN
            return _mix(state)

    def random(self, n: int | None = None) -> np.ndarray | float:
        """Uniform doubles in [0, 1)."""
        count = 1 if n is None else int(n)
        u = (self.next_uint64(count) >> _S11).astype(np.float64) * _INV53
        return float(u[0]) if n is None else u

    def uniform(self, low: float, high: float, n: int | None = None):
        u = self.random(n)
        return low + (high - low) * u

    def log_uniform(self, low: float, high: float, n: int | None = None):
        return np.exp(self.uniform(np.log(low), np.log(high), n))

    def integers(self, high: int, n: int | None = None):
        """Integers in [0, high); floor of a 53-bit uniform (bias < 2**-40 for small ``high``)."""
        if high <= 0:
            raise ValueError("high must be positive")
        u = self.random(n)
        if n is None:
            return min(int(u * high), high - 1)
        return np.minimum((u * high).astype(np.int64), high - 1)

    def normal(self, n: int) -> np.ndarray:
        """Standard normals via the Box-Muller transform (two uniforms per pair)."""
        m = (int(n) + 1) // 2
        u1 = self.random(m)
        u2 = self.random(m)
        radius = np.sqrt(-2.0 * np.log1p(-u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([radius * np.cos(theta), radius * np.sin(theta)])
        return z[:n]

    def choice_without_replacement(self, population: int, k: int) -> np.ndarray:
        """``k`` distinct indices from ``range(population)``, ordered by random key."""
        if k > population:
            raise ValueError("cannot draw more items than the population holds")
        keys = self.next_uint64(population)
        return np.argsort(keys, kind="stable")[:k]
