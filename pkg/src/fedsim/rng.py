"""Deterministic RNG derivation.

Every stochastic choice in the simulator draws from a generator keyed by an
explicit chain of non-negative integers, so whole runs replay bit-identically.
"""

from __future__ import annotations

import numpy as np


def rng_from(*keys: int) -> np.random.Generator:
    """Generator seeded by a chain of non-negative integers."""
    return np.random.default_rng(keys)


def derive_seed(*keys: int) -> int:
    """Collapse a key chain into a single reusable integer seed."""
    return int(rng_from(*keys).integers(0, 2**63 - 1))
