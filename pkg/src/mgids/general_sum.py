"""N-player general-sum tabular Markov games and the normal-form reduction.

Joint actions are flattened with ``np.ravel_multi_index`` over the per-player
action counts. A deterministic policy for player i is an (H, S) table of that
player's action indices; a pure profile picks one policy per player.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ._seeding import rng
from .belief import expected_kl_table, mean_kernel, posterior_particles
from .errors import ConvergenceFailure, EnumerationTooLarge, InvalidArgument
from .game import ROW_SUM_TOL, _frozen, deterministic_action_tables
from .solvers import JointDistribution, NormalFormGame, cce_solve, ne_solve

PROFILE_GUARD = 10_000


@dataclass(frozen=True, eq=False)
class TabularGeneralSumMG:
    kernel: np.ndarray  # (H, S, joint A, S)
    reward: np.ndarray  # (N, H, S, joint A)
    action_counts: tuple
    initial_state: int = 0
    bounded_rewards: bool = True

    def __post_init__(self):
        P = _frozen(self.kernel)
        r = _frozen(self.reward)
        counts = tuple(int(n) for n in self.action_counts)
        if P.ndim != 4 or P.shape[1] != P.shape[3]:
            raise InvalidArgument("kernel must have shape (H, S, A, S)")
        if not counts or min(counts) < 1 or int(np.prod(counts)) != P.shape[2]:
            raise InvalidArgument("action counts must multiply to the joint action count")
        if r.shape != (len(counts),) + P.shape[:3]:
            raise InvalidArgument("reward must have shape (N, H, S, A)")
        if (P < 0).any() or np.abs(P.sum(axis=-1) - 1.0).max() > ROW_SUM_TOL:
            raise InvalidArgument("kernel rows must be probability vectors")
        if not np.isfinite(r).all() or (self.bounded_rewards and ((r < 0).any() or (r > 1).any())):
            raise InvalidArgument("rewards must be finite and, unless unbounded, in [0, 1]")
        if not 0 <= int(self.initial_state) < P.shape[1]:
            raise InvalidArgument("initial state out of range")
        object.__setattr__(self, "kernel", P)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "action_counts", counts)
        object.__setattr__(self, "initial_state", int(self.initial_state))

    @property
    def num_players(self) -> int:
        return len(self.action_counts)

    @property
    def horizon(self) -> int:
        return self.kernel.shape[0]

    @property
    def num_states(self) -> int:
        return self.kernel.shape[1]

    @property
    def joint_actions(self) -> int:
        return self.kernel.shape[2]

    def with_kernel(self, kernel) -> "TabularGeneralSumMG":
        return TabularGeneralSumMG(kernel, self.reward, self.action_counts, self.initial_state, self.bounded_rewards)

    def with_reward(self, reward, bounded: bool = True) -> "TabularGeneralSumMG":
        return TabularGeneralSumMG(self.kernel, reward, self.action_counts, self.initial_state, bounded)


@dataclass(frozen=True)
class TrajectoryGS:
    states: tuple
    joint_actions: tuple
    rewards: tuple  # per step, one reward per player

    def transitions(self):
        for h, ja in enumerate(self.joint_actions):
            yield (h, self.states[h], ja), self.states[h + 1]


@dataclass(frozen=True, eq=False)
class PurePolicyProfileSet:
    """policies[i] is an (n_i, H, S) array of player i's deterministic action tables."""

    policies: tuple

    def __post_init__(self):
        pols = tuple(np.asarray(p, dtype=int) for p in self.policies)
        if not pols or any(p.ndim != 3 or len(p) == 0 for p in pols):
            raise InvalidArgument("each player needs a nonempty (n, H, S) policy array")
        if int(np.prod([len(p) for p in pols])) > PROFILE_GUARD:
            raise EnumerationTooLarge("too many pure profiles")
        for p in pols:
            p.setflags(write=False)
        object.__setattr__(self, "policies", pols)

    @property
    def counts(self) -> tuple:
        return tuple(len(p) for p in self.policies)

    @classmethod
    def all_deterministic(cls, env: TabularGeneralSumMG) -> "PurePolicyProfileSet":
        return cls(tuple(deterministic_action_tables(env.horizon, env.num_states, n) for n in env.action_counts))

    def profile_table(self, env: TabularGeneralSumMG, profile) -> np.ndarray:
        """(H, S) joint-action table of one pure profile."""
        tables = [self.policies[i][k] for i, k in enumerate(profile)]
        return np.ravel_multi_index(tuple(tables), env.action_counts)

    def all_profile_tables(self, env: TabularGeneralSumMG) -> np.ndarray:
        """(num profiles, H, S) joint-action tables in C order over profile indices."""
        grids = np.meshgrid(*(np.arange(n) for n in self.counts), indexing="ij")
        idx = [g.ravel() for g in grids]
        tables = [self.policies[i][idx[i]] for i in range(len(self.counts))]
        return np.ravel_multi_index(tuple(tables), env.action_counts)


class MixedKind(str, Enum):
    JOINT = "joint"
    PRODUCT = "product"


@dataclass(frozen=True, eq=False)
class MixedJointPolicy:
    kind: MixedKind
    pure_sets: PurePolicyProfileSet
    probs: np.ndarray  # joint law over profiles, shape = pure_sets.counts
    marginals: tuple = ()
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.shape != self.pure_sets.counts or (p < -1e-12).any() or abs(p.sum() - 1) > 1e-9:
            raise InvalidArgument("profile distribution does not match the pure sets")
        p = np.maximum(p, 0.0)
        p = p / p.sum()
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "kind", MixedKind(self.kind))

    @classmethod
    def joint(cls, pure_sets, probs, info=None) -> "MixedJointPolicy":
        return cls(MixedKind.JOINT, pure_sets, probs, (), info or {})

    @classmethod
    def product(cls, pure_sets, marginals, info=None) -> "MixedJointPolicy":
        out = np.ones(())
        for q in marginals:
            out = np.multiply.outer(out, np.asarray(q, dtype=float))
        return cls(MixedKind.PRODUCT, pure_sets, out, tuple(np.asarray(q, dtype=float) for q in marginals), info or {})

    @classmethod
    def point(cls, pure_sets, profile) -> "MixedJointPolicy":
        p = np.zeros(pure_sets.counts)
        p[tuple(profile)] = 1.0
        return cls.joint(pure_sets, p)

    def realize(self, seed: int) -> tuple:
        """Draw one pure profile: a correlated draw for Joint, independent draws for Product."""
        g = rng(seed)
        if self.kind is MixedKind.PRODUCT:
            return tuple(int(g.choice(len(q), p=q / q.sum())) for q in self.marginals)
        flat = int(g.choice(self.probs.size, p=self.probs.ravel()))
        return tuple(int(i) for i in np.unravel_index(flat, self.probs.shape))


def _profile_dp(env: TabularGeneralSumMG, tables: np.ndarray) -> np.ndarray:
    """Start values (P, N) for a stack of (H, S) joint-action tables."""
    H, S = env.horizon, env.num_states
    states = np.arange(S)
    V = np.zeros((len(tables), env.num_players, S))
    for h in range(H - 1, -1, -1):
        ja = tables[:, h, :]
        r = env.reward[:, h][:, states[None, :], ja]  # (N, P, S)
        P = env.kernel[h][states[None, :], ja]  # (P, S, S')
        V = np.transpose(r, (1, 0, 2)) + np.einsum("pst,pnt->pns", P, V)
    return V[:, :, env.initial_state]


_PAYOFF_CACHE: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def profile_values(env: TabularGeneralSumMG, pure_sets: PurePolicyProfileSet) -> np.ndarray:
    """Payoff tensor (N, n_1, ..., n_N) of start values for every pure profile."""
    per_env = _PAYOFF_CACHE.setdefault(env, {})
    hit = per_env.get(id(pure_sets))
    if hit is not None and hit[0] is pure_sets:
        return hit[1]
    vals = _profile_dp(env, pure_sets.all_profile_tables(env))
    out = np.moveaxis(vals, 1, 0).reshape((env.num_players,) + pure_sets.counts)
    out.setflags(write=False)
    per_env[id(pure_sets)] = (pure_sets, out)
    return out


def evaluate_values_gs(env: TabularGeneralSumMG, pi: MixedJointPolicy) -> np.ndarray:
    U = profile_values(env, pi.pure_sets)
    return (U * pi.probs[None]).reshape(env.num_players, -1).sum(axis=1)


def _induced_mdp_best_response(env, i, opponent_tables) -> tuple[np.ndarray, float]:
    """Exact DP best response of player i when every opponent plays one fixed table."""
    H, S = env.horizon, env.num_states
    n_i = env.action_counts[i]
    V = np.zeros(S)
    actions = np.empty((H, S), dtype=int)
    states = np.arange(S)
    for h in range(H - 1, -1, -1):
        per_player = [None] * env.num_players
        for j, t in opponent_tables.items():
            per_player[j] = np.broadcast_to(t[h][:, None], (S, n_i))
        per_player[i] = np.broadcast_to(np.arange(n_i)[None, :], (S, n_i))
        ja = np.ravel_multi_index(tuple(per_player), env.action_counts)
        q = env.reward[i, h][states[:, None], ja] + env.kernel[h][states[:, None], ja] @ V
        best = q.max(axis=1, keepdims=True)
        actions[h] = (np.abs(q - best) <= 1e-12 * np.maximum(1.0, np.abs(best))).argmax(axis=1)
        V = q[states, actions[h]]
    return actions, float(V[env.initial_state])


def best_response_gs(env: TabularGeneralSumMG, pi: MixedJointPolicy, i: int, pure_set_i=None):
    """Best fixed deviation of player i against the others' marginal of pi.

    ``pure_set_i`` is an (n, H, S) array of candidate tables; ``None`` means
    every deterministic Markov policy. A deviation commits before the
    correlation signal, so the opponents' law is the marginal of pi.
    """
    q = pi.probs.sum(axis=i)
    opp_profiles = [tuple(int(x) for x in p) for p in np.argwhere(q > 0)]
    others = [j for j in range(env.num_players) if j != i]
    if pure_set_i is None and len(opp_profiles) == 1:
        prof = opp_profiles[0]
        tables = {j: pi.pure_sets.policies[j][prof[k]] for k, j in enumerate(others)}
        return _induced_mdp_best_response(env, i, tables)

    cands = (
        deterministic_action_tables(env.horizon, env.num_states, env.action_counts[i])
        if pure_set_i is None
        else np.asarray(pure_set_i, dtype=int)
    )
    weights = np.array([q[p] for p in opp_profiles])
    tables = []
    for c in cands:
        for prof in opp_profiles:
            per = [None] * env.num_players
            per[i] = c
            for k, j in enumerate(others):
                per[j] = pi.pure_sets.policies[j][prof[k]]
            tables.append(np.ravel_multi_index(tuple(per), env.action_counts))
    vals = _profile_dp(env, np.array(tables))[:, i].reshape(len(cands), len(opp_profiles)) @ weights
    best = vals.max()
    k = int(np.flatnonzero(np.abs(vals - best) <= 1e-12 * max(1.0, abs(best)))[0])
    return cands[k], float(vals[k])


def equilibrium_gap(env: TabularGeneralSumMG, pi: MixedJointPolicy, pure_sets=None) -> np.ndarray:
    """Per-player gain from the best fixed deviation within the pure sets.

    Signed: under a joint policy the recommended play can beat every fixed
    deviation, so entries may be negative. For product policies they are not.
    """
    sets = pi.pure_sets if pure_sets is None else pure_sets
    U = profile_values(env, pi.pure_sets)
    current = evaluate_values_gs(env, pi)
    gaps = np.empty(env.num_players)
    for i in range(env.num_players):
        if sets is pi.pure_sets:
            # deviations inside the profile grid read straight off the payoff tensor
            others = pi.probs.sum(axis=i, keepdims=True)
            axes = tuple(j for j in range(env.num_players) if j != i)
            dev = (U[i] * others).sum(axis=axes)
            gaps[i] = dev.max() - current[i]
        else:
            gaps[i] = best_response_gs(env, pi, i, sets.policies[i])[1] - current[i]
    return gaps


def build_mean_env_gs(belief, lam: float) -> TabularGeneralSumMG:
    """Posterior-mean kernel; every player's reward gets the same lam * E[KL] bonus."""
    if lam < 0:
        raise InvalidArgument("lambda must be nonnegative")
    template = belief.template
    reward = np.array(template.reward, dtype=float)
    if lam > 0:
        reward = reward + lam * expected_kl_table(belief)[None]
    return TabularGeneralSumMG(mean_kernel(belief), reward, template.action_counts, template.initial_state, False)


def mutual_info_gs(belief, pi: MixedJointPolicy) -> float:
    """Episode information under pi: profile-weighted occupancy in the mean env times E[KL]."""
    env0 = build_mean_env_gs(belief, 0.0)
    ekl = expected_kl_table(belief)
    tables = pi.pure_sets.all_profile_tables(env0)
    probs = pi.probs.ravel()
    live = probs > 0
    tables, probs = tables[live], probs[live]
    S = env0.num_states
    states = np.arange(S)
    rho = np.zeros((len(tables), S))
    rho[:, env0.initial_state] = 1.0
    total = np.zeros(len(tables))
    for h in range(env0.horizon):
        ja = tables[:, h, :]
        total += (rho * ekl[h][states[None, :], ja]).sum(axis=1)
        rho = np.einsum("ps,pst->pt", rho, env0.kernel[h][states[None, :], ja])
    return max(float(probs @ total), 0.0)


def expected_values_gs(belief, pi: MixedJointPolicy, num_samples: int | None = None, seed: int = 0) -> np.ndarray:
    envs, w, _ = posterior_particles(belief, num_samples, seed)
    return sum(wi * evaluate_values_gs(e, pi) for e, wi in zip(envs, w))


def reg_maids_gs_select(belief, lam: float, pure_sets: PurePolicyProfileSet, target: str = "cce") -> MixedJointPolicy:
    env = build_mean_env_gs(belief, lam)
    game = NormalFormGame(profile_values(env, pure_sets))
    if target == "ne":
        try:
            prod = ne_solve(game)
            return MixedJointPolicy.product(pure_sets, prod.marginals, {"solver": "ne"})
        except ConvergenceFailure as exc:
            joint = cce_solve(game)
            return MixedJointPolicy.joint(pure_sets, joint.probs, {"solver": "cce", "ne_fallback": True, "ne_best_gap": exc.best_gap})
    if target != "cce":
        raise InvalidArgument("target must be 'ne' or 'cce'")
    return MixedJointPolicy.joint(pure_sets, cce_solve(game).probs, {"solver": "cce"})


def simulate_episode_gs(env: TabularGeneralSumMG, table: np.ndarray, rng_seed: int) -> TrajectoryGS:
    """Play a pure profile's (H, S) joint-action table for one episode."""
    u = rng(rng_seed).random(env.horizon)
    s = env.initial_state
    states, acts, rewards = [s], [], []
    for h in range(env.horizon):
        ja = int(table[h, s])
        rewards.append(tuple(float(x) for x in env.reward[:, h, s, ja]))
        cdf = np.cumsum(env.kernel[h, s, ja])
        s = min(int(np.searchsorted(cdf, u[h], side="right")), cdf.size - 1)
        acts.append(ja)
        states.append(s)
    return TrajectoryGS(tuple(states), tuple(acts), tuple(rewards))


def random_general_sum_mg(N: int, H: int, S: int, counts, seed: int, concentration: float = 1.0) -> TabularGeneralSumMG:
    g = rng(seed)
    A = int(np.prod(counts))
    P = g.dirichlet(np.full(S, concentration), size=(H, S, A))
    return TabularGeneralSumMG(P, g.random((N, H, S, A)), tuple(counts))


def zero_sum_embedding(env) -> TabularGeneralSumMG:
    """Two-player general-sum copy of a zero-sum game: r2 = 1 - r1."""
    H, S, A, B = env.dims
    P = env.kernel.reshape(H, S, A * B, S)
    r1 = env.reward.reshape(H, S, A * B)
    return TabularGeneralSumMG(P, np.stack([r1, 1.0 - r1]), (A, B), env.initial_state)


def gs_env_to_dict(env: TabularGeneralSumMG) -> dict:
    return {
        "num_players": env.num_players,
        "horizon": env.horizon,
        "num_states": env.num_states,
        "action_counts": list(env.action_counts),
        "kernel": env.kernel.tolist(),
        "reward": env.reward.tolist(),
        "initial_state": env.initial_state,
    }


def gs_env_from_dict(doc: dict) -> TabularGeneralSumMG:
    try:
        env = TabularGeneralSumMG(
            np.array(doc["kernel"], dtype=float),
            np.array(doc["reward"], dtype=float),
            tuple(doc["action_counts"]),
            int(doc.get("initial_state", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InvalidArgument):
            raise
        raise InvalidArgument(f"malformed general-sum environment: {exc}") from exc
    if (doc.get("num_players"), doc.get("horizon"), doc.get("num_states")) != (env.num_players, env.horizon, env.num_states):
        raise InvalidArgument("declared dimensions disagree with arrays")
    return env
