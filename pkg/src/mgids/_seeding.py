"""Deterministic seed derivation shared by every sampling routine."""

from __future__ import annotations

import numpy as np


def derive_seed(*keys: int) -> int:
    """Hash a tuple of nonnegative integers into a 63-bit seed."""
    state = np.random.SeedSequence([int(k) for k in keys]).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1])) & ((1 << 63) - 1)


def rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(int(seed))
