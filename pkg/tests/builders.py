"""Random instance builders shared by several test modules."""

import numpy as np

from mgids.belief import FiniteSupportBelief
from mgids.game import TabularZeroSumMG


def random_product_belief(seed, H=2, S=2, A=2, B=2, options=2, concentration=1.0):
    """Independent per-step candidate kernels; the exact setting for occupancy-based MI."""
    g = np.random.default_rng(seed)
    template = TabularZeroSumMG(np.full((H, S, A, B, S), 1.0 / S), g.random((H, S, A, B)))
    steps = [[g.dirichlet(np.full(S, concentration), size=(S, A, B)) for _ in range(options)] for _ in range(H)]
    weights = [g.dirichlet(np.ones(options)) for _ in range(H)]
    return FiniteSupportBelief.from_step_factors(template, steps, weights)


def random_dims(g, H_max=3, n_max=3):
    H = int(g.integers(1, H_max + 1))
    S, A, B = (int(x) for x in g.integers(1, n_max + 1, 3))
    return H, S, A, B
