"""Seeded randomness helpers.

Everything random in this package flows through a counter-based Philox
generator so that the same seed produces the same stream on every platform,
independent of how many values other code has drawn.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def make_rng(seed: int) -> np.random.Generator:
    """Return a Generator backed by Philox with the given 64-bit seed."""
    return np.random.Generator(np.random.Philox(key=seed & _MASK64))


def derive_seed(seed: int, index: int) -> int:
    """Per-item seed for reproducible sharding: seed XOR item index."""
    return (seed ^ index) & _MASK64
