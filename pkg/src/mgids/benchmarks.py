"""Named prior generators used by the shipped experiment configs.

Every generator builds a step-product finite-support prior (candidates are the
Cartesian product of per-step kernel options), so posteriors stay products and
the occupancy form of the episode information is exact.
"""

from __future__ import annotations

import numpy as np

from ._seeding import rng
from .belief import FiniteSupportBelief
from .errors import InvalidArgument
from .game import TabularZeroSumMG, build_product_mg
from .general_sum import TabularGeneralSumMG


def _rows(g: np.random.Generator, shape, S: int, concentration: float) -> np.ndarray:
    return g.dirichlet(np.full(S, concentration), size=shape)


def zero_sum_gamble(seed: int = 0, spread: float = 0.4) -> tuple[FiniteSupportBelief, dict]:
    """Two-candidate zero-sum prior with S = A = B = 2 and H = 2.

    The first-step max action decides how likely the game moves to the rich
    state; the two candidates disagree on which action leads there, so their
    Nash policies differ and learning the kernel matters.
    """
    g = rng(seed)
    H, S, A, B = 2, 2, 2, 2
    reward = np.empty((H, S, A, B))
    reward[0] = 0.45 + 0.1 * g.random((S, A, B))
    reward[1, 0] = 0.7 + 0.3 * g.random((A, B))
    reward[1, 1] = 0.3 * g.random((A, B))
    template = TabularZeroSumMG(np.full((H, S, A, B, S), 0.5), reward, 0)

    base = 0.5 + spread * np.array([[1.0, 0.6], [-0.6, -1.0]])
    options = []
    for table in (base, 1.0 - base):
        k0 = np.empty((S, A, B, S))
        k0[:, :, :, 0] = table
        k0[:, :, :, 1] = 1.0 - table
        options.append(k0)
    k1 = _rows(g, (S, A, B), S, 2.0)
    return FiniteSupportBelief.from_step_factors(template, [options, [k1]]), {}


def _probe_parts(g: np.random.Generator, p_high: float, p_safe: float):
    """Rewards, the two first-step kernel options, and the known last-step kernel."""
    H, S, A, B = 2, 2, 2, 2
    reward = np.empty((H, S, A, B))
    reward[0] = 0.45 + 0.1 * g.random((S, A, B))
    reward[1, 0] = 0.7 + 0.3 * g.random((A, B))
    reward[1, 1] = 0.3 * g.random((A, B))
    options = []
    for rich in (p_high, 1.0 - p_high):
        table = np.array([[rich, rich - 0.05 * np.sign(rich - 0.5)], [p_safe, p_safe]])
        k0 = np.empty((S, A, B, S))
        k0[:, :, :, 0] = table
        k0[:, :, :, 1] = 1.0 - table
        options.append(k0)
    return reward, options, _rows(g, (S, A, B), S, 2.0)


def zero_sum_probe(seed: int = 0, p_high: float = 0.9, p_safe: float = 0.5) -> tuple[FiniteSupportBelief, dict]:
    """Two-candidate zero-sum prior with S = A = B = 2 and H = 2 and one uninformative action.

    Max action 1 reaches the rich state with probability ``p_safe`` under both
    candidates and so reveals nothing. Max action 0 is a gamble: likely rich
    under one candidate, likely poor under the other, and its outcome
    identifies the candidate.
    """
    reward, options, k1 = _probe_parts(rng(seed), p_high, p_safe)
    template = TabularZeroSumMG(np.full((2,) + k1.shape, 0.5), reward, 0)
    return FiniteSupportBelief.from_step_factors(template, [options, [k1]]), {}


def random_zero_sum_product(
    seed: int = 0, H: int = 2, S: int = 2, A: int = 2, B: int = 2, options: int = 2, concentration: float = 1.0
) -> tuple[FiniteSupportBelief, dict]:
    g = rng(seed)
    template = TabularZeroSumMG(np.full((H, S, A, B, S), 1.0 / S), g.random((H, S, A, B)), 0)
    steps = [[_rows(g, (S, A, B), S, concentration) for _ in range(options)] for _ in range(H)]
    return FiniteSupportBelief.from_step_factors(template, steps), {}


def general_sum_random(
    seed: int = 0, N: int = 2, H: int = 2, S: int = 2, n: int = 2, options: int = 2, concentration: float = 0.7
) -> tuple[FiniteSupportBelief, dict]:
    g = rng(seed)
    counts = (n,) * N
    A = n**N
    template = TabularGeneralSumMG(np.full((H, S, A, S), 1.0 / S), g.random((N, H, S, A)), counts, 0)
    steps = [[_rows(g, (S, A), S, concentration) for _ in range(options)] for _ in range(H)]
    return FiniteSupportBelief.from_step_factors(template, steps), {}


def product_side_reward(seed: int = 0, K: int = 100, p_high: float = 0.9) -> tuple[FiniteSupportBelief, dict]:
    """Product of a 2-state 2x2 probe game and a side game whose rewards are at most 1/(2HK), H = 2.

    Main-game uncertainty sits at the first step and side-game uncertainty at
    the last, so the product candidates remain a step product. The side
    game's last-step kernel never changes a value, so learning it is wasted
    effort. The partition groups candidates by main game; cells have
    distortion at most 2H * delta.
    """
    g = rng(seed)
    H, S, A, B = 2, 2, 2, 2
    delta = 1.0 / (2.0 * H * K)
    main_reward, main_step0, main_last = _probe_parts(g, p_high, 0.5)
    main_reward = (1.0 - delta) * main_reward
    side_reward = delta * g.random((H, S, A, B))
    side_first = _rows(g, (S, A, B), S, 1.0)
    side_last = [_rows(g, (S, A, B), S, 0.6) for _ in range(2)]

    candidates, labels = [], []
    for i, m0 in enumerate(main_step0):
        main = TabularZeroSumMG(np.stack([m0, main_last]), main_reward, 0)
        for s_last in side_last:
            side = TabularZeroSumMG(np.stack([side_first, s_last]), side_reward, 0)
            candidates.append(build_product_mg(main, side))
            labels.append(i)
    belief = FiniteSupportBelief.uniform(candidates)
    return belief, {"partition_labels": labels, "epsilon": 2.0 * H * delta}


GENERATORS = {
    "zero_sum_gamble": zero_sum_gamble,
    "zero_sum_probe": zero_sum_probe,
    "random_zero_sum_product": random_zero_sum_product,
    "general_sum_random": general_sum_random,
    "product_side_reward": product_side_reward,
}


def build_prior(spec: dict):
    spec = dict(spec)
    name = spec.pop("generator")
    if name not in GENERATORS:
        raise InvalidArgument(f"unknown prior generator {name!r}")
    return GENERATORS[name](**spec)
