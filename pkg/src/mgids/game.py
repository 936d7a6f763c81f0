"""Tabular episodic two-player zero-sum Markov games.

Arrays are dense and 0-indexed: ``kernel[h, s, a, b, s']`` and
``reward[h, s, a, b]``. Step ``h`` runs over ``0..H-1`` and value tables carry
an extra terminal row ``V[H] = 0``.
"""

from __future__ import annotations

import itertools
import json
import weakref
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from ._seeding import rng
from .errors import EnumerationTooLarge, InvalidArgument
from .solvers import minimax_solve

ROW_SUM_TOL = 1e-12
DETERMINISTIC_GUARD = 100_000


class Side(str, Enum):
    MAX = "max"
    MIN = "min"


def _frozen(x) -> np.ndarray:
    arr = np.array(x, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TabularZeroSumMG:
    kernel: np.ndarray
    reward: np.ndarray
    initial_state: int = 0
    # Mean environments carry KL-shifted rewards outside [0, 1].
    bounded_rewards: bool = True

    def __post_init__(self):
        P = _frozen(self.kernel)
        r = _frozen(self.reward)
        if P.ndim != 5 or P.shape[1] != P.shape[4]:
            raise InvalidArgument(f"kernel must have shape (H,S,A,B,S), got {P.shape}")
        if r.shape != P.shape[:4]:
            raise InvalidArgument(f"reward shape {r.shape} does not match kernel rows {P.shape[:4]}")
        if min(P.shape) < 1:
            raise InvalidArgument("all dimensions must be positive")
        if (P < 0).any() or not np.isfinite(P).all():
            raise InvalidArgument("kernel entries must be finite and nonnegative")
        if np.abs(P.sum(axis=-1) - 1.0).max() > ROW_SUM_TOL:
            raise InvalidArgument("kernel rows must sum to 1")
        if not np.isfinite(r).all():
            raise InvalidArgument("rewards must be finite")
        if self.bounded_rewards and ((r < 0).any() or (r > 1).any()):
            raise InvalidArgument("rewards must lie in [0, 1]")
        s1 = int(self.initial_state)
        if not 0 <= s1 < P.shape[1]:
            raise InvalidArgument("initial state out of range")
        object.__setattr__(self, "kernel", P)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "initial_state", s1)

    @property
    def horizon(self) -> int:
        return self.kernel.shape[0]

    @property
    def num_states(self) -> int:
        return self.kernel.shape[1]

    @property
    def num_actions_max(self) -> int:
        return self.kernel.shape[2]

    @property
    def num_actions_min(self) -> int:
        return self.kernel.shape[3]

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return self.horizon, self.num_states, self.num_actions_max, self.num_actions_min

    def with_kernel(self, kernel) -> "TabularZeroSumMG":
        return TabularZeroSumMG(kernel, self.reward, self.initial_state, self.bounded_rewards)

    def with_reward(self, reward, bounded: bool = True) -> "TabularZeroSumMG":
        return TabularZeroSumMG(self.kernel, reward, self.initial_state, bounded)


@dataclass(frozen=True, eq=False)
class MarkovPolicy:
    side: Side
    dist: np.ndarray

    def __post_init__(self):
        d = _frozen(self.dist)
        if d.ndim != 3:
            raise InvalidArgument("policy table must have shape (H, S, n)")
        if (d < 0).any() or np.abs(d.sum(axis=-1) - 1.0).max() > ROW_SUM_TOL:
            raise InvalidArgument("policy rows must be probability vectors")
        object.__setattr__(self, "side", Side(self.side))
        object.__setattr__(self, "dist", d)

    @property
    def num_actions(self) -> int:
        return self.dist.shape[2]

    def same_as(self, other: "MarkovPolicy") -> bool:
        return self.side == other.side and np.array_equal(self.dist, other.dist)

    @classmethod
    def uniform(cls, side: Side, H: int, S: int, n: int) -> "MarkovPolicy":
        return cls(side, np.full((H, S, n), 1.0 / n))

    @classmethod
    def from_actions(cls, side: Side, actions, n: int) -> "MarkovPolicy":
        actions = np.asarray(actions, dtype=int)
        return cls(side, np.eye(n)[actions])


@dataclass(frozen=True, eq=False)
class PolicyMixture:
    """A seed-randomized policy: one component is drawn per episode and kept for all steps."""

    components: tuple
    weights: np.ndarray

    def __post_init__(self):
        comps = tuple(self.components)
        w = _frozen(self.weights)
        if not comps or w.shape != (len(comps),):
            raise InvalidArgument("mixture needs one weight per component")
        if (w < -1e-15).any() or abs(w.sum() - 1.0) > 1e-10:
            raise InvalidArgument("mixture weights must form a distribution")
        if len({c.side for c in comps}) != 1:
            raise InvalidArgument("mixture components must share a side")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "weights", w)

    @property
    def side(self) -> Side:
        return self.components[0].side

    def realize(self, seed: int) -> MarkovPolicy:
        idx = int(rng(seed).choice(len(self.components), p=self.weights / self.weights.sum()))
        return self.components[idx]


def mixture_terms(policy) -> list[tuple[float, MarkovPolicy]]:
    """(weight, component) pairs with zero-weight components dropped."""
    if isinstance(policy, MarkovPolicy):
        return [(1.0, policy)]
    return [(float(w), c) for w, c in zip(policy.weights, policy.components) if w > 0]


@dataclass(frozen=True)
class ValueTables:
    V: np.ndarray  # (H+1, S)
    Q: np.ndarray  # (H, S, A, B)

    def at_start(self, env: TabularZeroSumMG) -> float:
        return float(self.V[0, env.initial_state])


@dataclass(frozen=True)
class Trajectory:
    states: tuple[int, ...]
    actions_max: tuple[int, ...]
    actions_min: tuple[int, ...]
    rewards: tuple[float, ...]

    def transitions(self):
        """Yield ((h, s, a, b), s_next) for each step."""
        for h, (a, b) in enumerate(zip(self.actions_max, self.actions_min)):
            yield (h, self.states[h], a, b), self.states[h + 1]


@dataclass(frozen=True)
class OccupancyTable:
    d: np.ndarray  # (H, S, A, B)


def _check_policies(env: TabularZeroSumMG, mu: MarkovPolicy, nu: MarkovPolicy) -> None:
    H, S, A, B = env.dims
    if mu.side != Side.MAX or nu.side != Side.MIN:
        raise InvalidArgument("expected a max-side and a min-side policy")
    if mu.dist.shape != (H, S, A) or nu.dist.shape != (H, S, B):
        raise InvalidArgument("policy shapes do not match the environment")


def evaluate_values(env: TabularZeroSumMG, mu: MarkovPolicy, nu: MarkovPolicy) -> ValueTables:
    _check_policies(env, mu, nu)
    H, S, A, B = env.dims
    V = np.zeros((H + 1, S))
    Q = np.empty((H, S, A, B))
    for h in range(H - 1, -1, -1):
        Q[h] = env.reward[h] + env.kernel[h] @ V[h + 1]
        V[h] = np.einsum("sa,sab,sb->s", mu.dist[h], Q[h], nu.dist[h])
    return ValueTables(V, Q)


def start_value(env: TabularZeroSumMG, mu: MarkovPolicy, nu: MarkovPolicy) -> float:
    return evaluate_values(env, mu, nu).at_start(env)


def _lowest_best(values: np.ndarray, maximize: bool) -> np.ndarray:
    """Per row, the lowest index whose value is optimal up to 1e-12."""
    best = values.max(axis=-1, keepdims=True) if maximize else values.min(axis=-1, keepdims=True)
    close = np.abs(values - best) <= 1e-12 * np.maximum(1.0, np.abs(best))
    return close.argmax(axis=-1)


def best_response_min(env: TabularZeroSumMG, mu: MarkovPolicy) -> tuple[MarkovPolicy, ValueTables]:
    H, S, A, B = env.dims
    if mu.side != Side.MAX or mu.dist.shape != (H, S, A):
        raise InvalidArgument("best_response_min expects a max-side policy matching the env")
    V = np.zeros((H + 1, S))
    Q = np.empty((H, S, A, B))
    actions = np.empty((H, S), dtype=int)
    for h in range(H - 1, -1, -1):
        Q[h] = env.reward[h] + env.kernel[h] @ V[h + 1]
        cost = np.einsum("sa,sab->sb", mu.dist[h], Q[h])
        actions[h] = _lowest_best(cost, maximize=False)
        V[h] = cost[np.arange(S), actions[h]]
    return MarkovPolicy.from_actions(Side.MIN, actions, B), ValueTables(V, Q)


def best_response_max(env: TabularZeroSumMG, nu: MarkovPolicy) -> tuple[MarkovPolicy, ValueTables]:
    H, S, A, B = env.dims
    if nu.side != Side.MIN or nu.dist.shape != (H, S, B):
        raise InvalidArgument("best_response_max expects a min-side policy matching the env")
    V = np.zeros((H + 1, S))
    Q = np.empty((H, S, A, B))
    actions = np.empty((H, S), dtype=int)
    for h in range(H - 1, -1, -1):
        Q[h] = env.reward[h] + env.kernel[h] @ V[h + 1]
        gain = np.einsum("sab,sb->sa", Q[h], nu.dist[h])
        actions[h] = _lowest_best(gain, maximize=True)
        V[h] = gain[np.arange(S), actions[h]]
    return MarkovPolicy.from_actions(Side.MAX, actions, A), ValueTables(V, Q)


def solve_nash(env: TabularZeroSumMG) -> tuple[MarkovPolicy, MarkovPolicy, ValueTables]:
    """Nash pair and value by backward induction over stage matrix games."""
    H, S, A, B = env.dims
    V = np.zeros((H + 1, S))
    Q = np.empty((H, S, A, B))
    mu = np.empty((H, S, A))
    nu = np.empty((H, S, B))
    for h in range(H - 1, -1, -1):
        Q[h] = env.reward[h] + env.kernel[h] @ V[h + 1]
        for s in range(S):
            mu[h, s], nu[h, s], V[h, s] = minimax_solve(Q[h, s])
    return MarkovPolicy(Side.MAX, mu), MarkovPolicy(Side.MIN, nu), ValueTables(V, Q)


_NASH_CACHE: "weakref.WeakKeyDictionary[TabularZeroSumMG, tuple]" = weakref.WeakKeyDictionary()


def nash_cached(env: TabularZeroSumMG) -> tuple[MarkovPolicy, MarkovPolicy, ValueTables]:
    """solve_nash memoized on environment identity (environments are immutable)."""
    hit = _NASH_CACHE.get(env)
    if hit is None:
        hit = solve_nash(env)
        _NASH_CACHE[env] = hit
    return hit


def occupancy(env: TabularZeroSumMG, mu: MarkovPolicy, nu: MarkovPolicy) -> OccupancyTable:
    _check_policies(env, mu, nu)
    H, S, A, B = env.dims
    d = np.empty((H, S, A, B))
    p = np.zeros(S)
    p[env.initial_state] = 1.0
    for h in range(H):
        d[h] = p[:, None, None] * mu.dist[h][:, :, None] * nu.dist[h][:, None, :]
        p = np.einsum("sab,sabt->t", d[h], env.kernel[h])
    return OccupancyTable(d)


def _draw(cdf_row: np.ndarray, u: float) -> int:
    return min(int(np.searchsorted(cdf_row, u, side="right")), cdf_row.size - 1)


def simulate_episode(env: TabularZeroSumMG, mu: MarkovPolicy, nu: MarkovPolicy, rng_seed: int) -> Trajectory:
    _check_policies(env, mu, nu)
    H = env.horizon
    u = rng(rng_seed).random((H, 3))
    s = env.initial_state
    states, acts_a, acts_b, rewards = [s], [], [], []
    for h in range(H):
        a = _draw(np.cumsum(mu.dist[h, s]), u[h, 0])
        b = _draw(np.cumsum(nu.dist[h, s]), u[h, 1])
        rewards.append(float(env.reward[h, s, a, b]))
        s = _draw(np.cumsum(env.kernel[h, s, a, b]), u[h, 2])
        acts_a.append(a)
        acts_b.append(b)
        states.append(s)
    return Trajectory(tuple(states), tuple(acts_a), tuple(acts_b), tuple(rewards))


def value_gap_decomposition(
    e: TabularZeroSumMG, e2: TabularZeroSumMG, mu: MarkovPolicy, nu: MarkovPolicy
) -> tuple[float, list[float]]:
    """Gap V^e - V^e2 at the start state and its per-step kernel-difference terms."""
    if e.dims != e2.dims or e.initial_state != e2.initial_state:
        raise InvalidArgument("environments must share dimensions and initial state")
    if not np.array_equal(e.reward, e2.reward):
        raise InvalidArgument("environments must share rewards")
    Ve = evaluate_values(e, mu, nu)
    V2 = evaluate_values(e2, mu, nu)
    d = occupancy(e2, mu, nu).d
    terms = [
        float(np.sum(d[h] * ((e.kernel[h] - e2.kernel[h]) @ Ve.V[h + 1])))
        for h in range(e.horizon)
    ]
    return Ve.at_start(e) - V2.at_start(e2), terms


def build_product_mg(m1: TabularZeroSumMG, m2: TabularZeroSumMG) -> TabularZeroSumMG:
    """Product game: independent sub-kernels, summed rewards, flattened (sub1, sub2) indices."""
    if m1.horizon != m2.horizon:
        raise InvalidArgument("sub-games must share the horizon")
    H, S1, A1, B1 = m1.dims
    _, S2, A2, B2 = m2.dims
    P = np.einsum("hiacx,hjbdy->hijabcdxy", m1.kernel, m2.kernel)
    P = P.reshape(H, S1 * S2, A1 * A2, B1 * B2, S1 * S2)
    r = m1.reward[:, :, None, :, None, :, None] + m2.reward[:, None, :, None, :, None, :]
    r = r.reshape(H, S1 * S2, A1 * A2, B1 * B2)
    if r.max() > 1.0 + 1e-12:
        raise InvalidArgument("summed sub-rewards exceed 1; rescale the inputs")
    s1 = m1.initial_state * S2 + m2.initial_state
    return TabularZeroSumMG(P, np.clip(r, 0.0, 1.0), s1)


# ---------------------------------------------------------------------------
# deterministic policy enumeration


def deterministic_action_tables(H: int, S: int, n: int, guard: int = DETERMINISTIC_GUARD) -> np.ndarray:
    """All deterministic Markov policies as an (n**(H*S), H, S) array of action indices."""
    count = n ** (H * S)
    if count > guard:
        raise EnumerationTooLarge(f"{count} deterministic policies exceed the guard {guard}")
    return np.array(list(itertools.product(range(n), repeat=H * S)), dtype=int).reshape(count, H, S)


def pairwise_deterministic_values(
    env: TabularZeroSumMG, mu_actions: np.ndarray, nu_actions: np.ndarray, chunk: int = 256
) -> np.ndarray:
    """Start-state values for every (max table, min table) pair, shape (Pm, Pn)."""
    H, S, _, _ = env.dims
    out = np.empty((len(mu_actions), len(nu_actions)))
    states = np.arange(S)
    for lo in range(0, len(mu_actions), chunk):
        mu = mu_actions[lo:lo + chunk]
        V = np.zeros((len(mu), len(nu_actions), S))
        for h in range(H - 1, -1, -1):
            a = mu[:, h, :][:, None, :]
            b = nu_actions[:, h, :][None, :, :]
            r = env.reward[h][states, a, b]
            P = env.kernel[h][states, a, b]
            V = r + np.einsum("pqst,pqt->pqs", P, V)
        out[lo:lo + chunk] = V[:, :, env.initial_state]
    return out


# ---------------------------------------------------------------------------
# random instances


def random_zero_sum_mg(
    H: int, S: int, A: int, B: int, seed: int, concentration: float = 1.0, initial_state: int = 0
) -> TabularZeroSumMG:
    g = rng(seed)
    P = g.dirichlet(np.full(S, concentration), size=(H, S, A, B))
    return TabularZeroSumMG(P, g.random((H, S, A, B)), initial_state)


def random_policy(side: Side, H: int, S: int, n: int, seed: int) -> MarkovPolicy:
    return MarkovPolicy(side, rng(seed).dirichlet(np.ones(n), size=(H, S)))


# ---------------------------------------------------------------------------
# JSON


def env_to_dict(env: TabularZeroSumMG) -> dict:
    H, S, A, B = env.dims
    return {
        "horizon": H,
        "num_states": S,
        "actions_max": A,
        "actions_min": B,
        "kernel": env.kernel.tolist(),
        "reward": env.reward.tolist(),
        "initial_state": env.initial_state,
    }


def env_from_dict(doc: dict) -> TabularZeroSumMG:
    try:
        env = TabularZeroSumMG(
            np.array(doc["kernel"], dtype=float),
            np.array(doc["reward"], dtype=float),
            int(doc.get("initial_state", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InvalidArgument):
            raise
        raise InvalidArgument(f"malformed environment document: {exc}") from exc
    declared = (doc.get("horizon"), doc.get("num_states"), doc.get("actions_max"), doc.get("actions_min"))
    if declared != env.dims:
        raise InvalidArgument(f"declared dimensions {declared} disagree with arrays {env.dims}")
    return env


def save_env(env: TabularZeroSumMG, path) -> None:
    Path(path).write_text(json.dumps(env_to_dict(env)))


def load_env(path) -> TabularZeroSumMG:
    return env_from_dict(json.loads(Path(path).read_text()))
