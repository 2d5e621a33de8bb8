"""Deterministic random number utilities.

All randomness in this package flows through two primitives:

* ``SplitMix64`` -- a counter-based 64-bit generator used for weight
  initialization.  Its i-th output depends only on (seed, i), so arbitrary
  amounts of the stream can be produced vectorized with numpy.
* ``derive_seed`` -- hashes an arbitrary tuple of labels/integers down to a
  64-bit seed, used to give every shuffle, partition and synthetic series its
  own independent, reproducible stream.
"""

from __future__ import annotations

import hashlib

import numpy as np

_GOLDEN = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    # finalizer of splitmix64 (Steele et al.)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """Counter-based splitmix64 stream over a fixed seed."""

    def __init__(self, seed: int):
        self.seed = seed & _MASK
        self._counter = 0

    def next_u64(self, n: int) -> np.ndarray:
        """Next ``n`` raw 64-bit outputs as a uint64 array."""
        idx = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        with np.errstate(over="ignore"):
            state = np.uint64(self.seed) + idx * np.uint64(_GOLDEN)
            return _mix(state)

    def uniform(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """Next ``n`` float64 samples uniform in [low, high)."""
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return low + (high - low) * u


def derive_seed(*parts) -> int:
    """Collapse a tuple of labels into a 64-bit seed, stably across runs."""
    key = "\x1f".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")
