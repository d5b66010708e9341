"""Deterministic seed derivation.

Every stochastic subsystem (bootstrap resampling, per-round subsampling,
per-iteration significance tests) derives its own child seed from a parent
seed and an integer index with :func:`mix64`, a splitmix-style 64-bit
finalizer. Child seeds are therefore reproducible, order-independent, and
decoupled: drawing more randomness in one subsystem never shifts the stream
of another.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def mix64(seed: int, index: int) -> int:
    """Mix ``seed`` and ``index`` into a well-scrambled 64-bit child seed.

    Applies the splitmix64 finalizer to ``seed + (index + 1) * GOLDEN``.
    Both arguments are reduced modulo 2**64 first, so negative Python ints
    are accepted.
    """
    z = (seed + (index + 1) * _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def spawn(seed: int, index: int) -> np.random.Generator:
    """Return a fresh numpy Generator seeded with ``mix64(seed, index)``."""
    return np.random.default_rng(mix64(seed, index))
