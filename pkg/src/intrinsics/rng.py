"""Counter-based deterministic random number generator.

Every source of randomness in this package (weight init, dropout masks,
augmentation draws, epoch shuffles) flows through :class:`Rng` so that a
single 64-bit seed fully determines a run.  The generator is a SplitMix64
counter hash: draw ``i`` of seed ``s`` is a fixed integer mix of ``(s, i)``,
which makes streams platform independent and lets the full state serialize
as two unsigned 64-bit words (seed, counter).

All integer mixing happens on uint64 numpy arrays, where wraparound is
silent and well defined.
"""

from __future__ import annotations

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64_MASK = 0xFFFFFFFFFFFFFFFF


def _mix64(z: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer over a uint64 array."""
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def derive_seed(seed: int, *keys) -> int:
    """Derive a child seed from a parent seed and a tuple of keys.

    Keys may be ints or strings; the derivation is a deterministic hash
    chain, so the same (seed, keys) always yields the same child seed.
    Used to give epochs, iterations, and samples independent streams.
    """
    state = np.array([seed & _U64_MASK], dtype=np.uint64)
    for key in keys:
        if isinstance(key, str):
            parts = [len(key)] + [ord(c) for c in key]
        else:
            parts = [int(key) & _U64_MASK]
        for part in parts:
            state = _mix64((state + np.uint64(part)) * _GAMMA + _GAMMA)
    return int(state[0])


class Rng:
    """Seeded counter-based generator; no global state.

    The stream position is an explicit counter, so state is exactly
    ``(seed, counter)`` and restoring those two integers resumes the
    stream bit-exactly.
    """

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) & _U64_MASK
        self.counter = int(counter) & _U64_MASK

    def _raw(self, n: int) -> np.ndarray:
        """Next ``n`` raw uint64 draws."""
        idx = np.arange(self.counter, self.counter + n, dtype=np.uint64)
        self.counter = (self.counter + n) & _U64_MASK
        return _mix64((np.uint64(self.seed) + idx * _GAMMA) * _GAMMA + _GAMMA)

    def uniform(self, shape=()) -> np.ndarray:
        """Uniform float64 draws in [0, 1)."""
        n = int(np.prod(shape)) if shape else 1
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        return u.reshape(shape) if shape else float(u[0])

    def normal(self, shape=()) -> np.ndarray:
        """Standard normal draws via Box-Muller (two uniforms per value)."""
        n = int(np.prod(shape)) if shape else 1
        raw = self._raw(2 * n)
        u1 = (raw[:n] >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        u2 = (raw[n:] >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        # guard u1 = 0 so log stays finite
        r = np.sqrt(-2.0 * np.log(1.0 - u1))
        z = r * np.cos(2.0 * np.pi * u2)
        return z.reshape(shape) if shape else float(z[0])

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        """Uniform integers in [low, high] inclusive."""
        if high < low:
            raise ValueError(f"integers: empty range [{low}, {high}]")
        span = high - low + 1
        n = int(np.prod(shape)) if shape else 1
        vals = low + (self._raw(n) % np.uint64(span)).astype(np.int64)
        return vals.reshape(shape) if shape else int(vals[0])

    def permutation(self, n: int) -> np.ndarray:
        """Deterministic permutation of range(n) by sorting random keys."""
        keys = self._raw(n)
        return np.argsort(keys, kind="stable")

    def spawn(self, *keys) -> "Rng":
        """Independent child stream keyed off this generator's seed."""
        return Rng(derive_seed(self.seed, *keys))

    def state(self) -> tuple[int, int]:
        return (self.seed, self.counter)

    @classmethod
    def from_state(cls, seed: int, counter: int) -> "Rng":
        return cls(seed, counter)
