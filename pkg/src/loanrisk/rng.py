"""Deterministic pseudo-random streams built on the splitmix64 mixer.

Two access patterns are provided:

* :class:`Stream` -- a sequential generator for shuffles, weight draws and
  synthetic data, advanced one golden-ratio increment per output.
* :func:`counter_uniforms` -- counter-based access keyed by
  (seed, stream id, counter), so a value depends only on its coordinates
  and not on the order or parallel schedule in which cells are filled.

All arithmetic is 64-bit wrapping; results are identical across platforms
and numpy versions.
"""

from __future__ import annotations

import hashlib

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64_MASK = 0xFFFFFFFFFFFFFFFF
# 2**-53; top 53 bits of a u64 give a uniform double in [0, 1)
_INV_2_53 = 1.0 / 9007199254740992.0


def _mix(z):
    """splitmix64 finalizer; accepts uint64 scalars or arrays."""
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def _as_u64(seed: int) -> np.uint64:
    return np.uint64(int(seed) & _U64_MASK)


def derive_seed(master: int, label: str) -> int:
    """Derive a child seed from a master seed and a text label.

    Independent labels give independent streams, so adding a labelled
    consumer never perturbs the draws of another.
    """
    digest = hashlib.blake2b(
        label.encode("utf-8"), digest_size=8, key=int(master & _U64_MASK).to_bytes(8, "little")
    ).digest()
    return int.from_bytes(digest, "little")


def counter_uniforms(seed: int, stream: int, counters: np.ndarray) -> np.ndarray:
    """Uniform [0, 1) doubles for cells (seed, stream, counter)."""
    with np.errstate(over="ignore"):
        base = _mix(_as_u64(seed) + _GOLDEN)
        row = _mix(base ^ _mix(_as_u64(stream) + _GOLDEN))
        ctr = np.asarray(counters, dtype=np.uint64)
        words = _mix(row + (ctr + np.uint64(1)) * _GOLDEN)
    return (words >> np.uint64(11)).astype(np.float64) * _INV_2_53


class Stream:
    """Sequential splitmix64 generator with vectorized draw methods."""

    def __init__(self, seed: int):
        self._state = _as_u64(seed)

    def child(self, label: str) -> "Stream":
        return Stream(derive_seed(int(self._state), label))

    def _next_words(self, n: int) -> np.ndarray:
        with np.errstate(over="ignore"):
            steps = (np.arange(1, n + 1, dtype=np.uint64)) * _GOLDEN
            words = _mix(self._state + steps)
            self._state = self._state + np.uint64(n) * _GOLDEN
        return words

    def uniforms(self, n: int) -> np.ndarray:
        """n uniform doubles in [0, 1)."""
        return (self._next_words(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53

    def normals(self, n: int) -> np.ndarray:
        """n standard normals via Box-Muller."""
        m = (n + 1) // 2
        u1 = 1.0 - self.uniforms(m)  # (0, 1]: keeps log finite
        u2 = self.uniforms(m)
        radius = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([radius * np.cos(theta), radius * np.sin(theta)])
        return z[:n]

    def permutation(self, n: int) -> np.ndarray:
        """Random permutation of range(n) via stable key sort."""
        return np.argsort(self._next_words(n), kind="stable")

    def integers(self, n: int, bound: int) -> np.ndarray:
        """n integers uniform on [0, bound)."""
        return np.minimum((self.uniforms(n) * bound).astype(np.int64), bound - 1)

    def dirichlet(self, n: int) -> np.ndarray:
        """One draw from the flat Dirichlet over the n-simplex."""
        spacings = -np.log(1.0 - self.uniforms(n))
        return spacings / spacings.sum()
