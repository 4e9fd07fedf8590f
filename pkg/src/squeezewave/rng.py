"""Seeded, counter-based random number generation.

Synthesis must be reproducible bit-for-bit for a given seed, independent of
how the work is split across windows or threads.  A stateless counter design
gives that for free: the value at stream position ``i`` depends only on
``(seed, i)``, so any window can draw its own slice of the stream.

Construction, fully specified so it can be reimplemented elsewhere:

* ``word(seed, i)`` is the SplitMix64 finalizer applied to
  ``seed + (i + 1) * 0x9E3779B97F4A7C15`` (all arithmetic mod 2**64).
* Uniforms take the top 53 bits of the word: ``u = (word >> 11) * 2**-53``.
* Gaussians come from the Box-Muller transform on word pairs
  ``(2k, 2k + 1)``: with ``u1 = ((word(2k) >> 11) + 1) * 2**-53`` in (0, 1]
  and ``u2 = (word(2k+1) >> 11) * 2**-53`` in [0, 1),

      r = sqrt(-2 ln u1)
      gauss(2k)     = r * cos(2 pi u2)
      gauss(2k + 1) = r * sin(2 pi u2)
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _words(seed: int, start: int, count: int) -> np.ndarray:
    """SplitMix64 output words for stream positions [start, start+count)."""
    idx = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    z = np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + idx * _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def uniforms(seed: int, start: int, count: int) -> np.ndarray:
    """Uniform [0, 1) doubles at stream positions [start, start+count)."""
    return (_words(seed, start, count) >> np.uint64(11)) * 2.0**-53


def gaussians(seed: int, start: int, count: int) -> np.ndarray:
    """Standard-normal doubles at stream positions [start, start+count).

    Positions are absolute, so disjoint ranges of one stream never overlap
    and can be drawn in any order.
    """
    if count == 0:
        return np.zeros(0)
    first_pair = start // 2
    last_pair = (start + count - 1) // 2
    n_pairs = last_pair - first_pair + 1
    w = _words(seed, 2 * first_pair, 2 * n_pairs)
    u1 = ((w[0::2] >> np.uint64(11)) + np.uint64(1)) * 2.0**-53
    u2 = (w[1::2] >> np.uint64(11)) * 2.0**-53
    r = np.sqrt(-2.0 * np.log(u1))
    theta = (2.0 * np.pi) * u2
    out = np.empty(2 * n_pairs)
    out[0::2] = r * np.cos(theta)
    out[1::2] = r * np.sin(theta)
    lo = start - 2 * first_pair
    return out[lo : lo + count]


class Stream:
    """Sequential view over one counter stream, for weight initialization."""

    def __init__(self, seed: int):
        self.seed = seed
        self.pos = 0

    def normal(self, shape, scale: float = 1.0) -> np.ndarray:
        n = int(np.prod(shape))
        vals = gaussians(self.seed, self.pos, n) * scale
        self.pos += n + (n & 1)  # keep pair alignment between draws
        return vals.reshape(shape).astype(np.float32)
