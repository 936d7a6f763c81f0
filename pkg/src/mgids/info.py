"""Mutual information between the environment and an episode, and information ratios.

Policies may be plain Markov policies or seed mixtures. A seed mixture is
drawn once per episode, so values and occupancies are linear in the mixture
weights.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .belief import (
    build_mean_env,
    expected_kl_table,
    posterior_particles,
    weighted_estimate,
)
from .errors import EnumerationTooLarge, InvalidArgument
from .game import (
    MarkovPolicy,
    TabularZeroSumMG,
    best_response_min,
    evaluate_values,
    mixture_terms,
    nash_cached,
    occupancy,
)

MI_FLOOR = 1e-12
ENUMERATION_GUARD = 1_000_000


@dataclass(frozen=True)
class InfoRatioReport:
    numerator_regret: float
    denominator_mi: float
    ratio: float
    infinite: bool
    estimation_stderr: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def make_report(numerator: float, mi: float, stderr: float | None = None) -> InfoRatioReport:
    if mi <= MI_FLOOR:
        return InfoRatioReport(numerator, mi, math.inf, True, stderr)
    return InfoRatioReport(numerator, mi, numerator * numerator / mi, False, stderr)


def pair_terms(mu, nu):
    return [(wm * wn, m, n) for wm, m in mixture_terms(mu) for wn, n in mixture_terms(nu)]


def mixed_value(env: TabularZeroSumMG, mu, nu) -> float:
    return sum(w * evaluate_values(env, m, n).at_start(env) for w, m, n in pair_terms(mu, nu))


def mixed_occupancy(env: TabularZeroSumMG, mu, nu) -> np.ndarray:
    return sum(w * occupancy(env, m, n).d for w, m, n in pair_terms(mu, nu))


@dataclass(frozen=True)
class MIContext:
    """Per-belief quantities shared by every policy pair: mean env and E[KL] table."""

    mean_env: TabularZeroSumMG
    ekl: np.ndarray

    @classmethod
    def of(cls, belief) -> "MIContext":
        return cls(build_mean_env(belief, 0.0).env, expected_kl_table(belief))

    def mi(self, mu, nu) -> float:
        return max(float(np.sum(mixed_occupancy(self.mean_env, mu, nu) * self.ekl)), 0.0)


def mutual_info_trajectory(belief, mu, nu) -> float:
    """Episode information via occupancy in the reward-free mean env times expected KL."""
    return MIContext.of(belief).mi(mu, nu)


# ---------------------------------------------------------------------------
# exhaustive trajectory enumeration


def _check_enumerable(env: TabularZeroSumMG) -> None:
    H, S, A, B = env.dims
    if (S * A * B) ** H > ENUMERATION_GUARD:
        raise EnumerationTooLarge(f"(SAB)^H = {(S * A * B) ** H} exceeds {ENUMERATION_GUARD}")


def trajectory_law(env: TabularZeroSumMG, mu: MarkovPolicy, nu: MarkovPolicy) -> np.ndarray:
    """Probability of every (s1, a1, b1, ..., s_{H+1}) sequence, flattened."""
    H, S, _, _ = env.dims
    p = np.zeros((1, S))
    p[0, env.initial_state] = 1.0
    for h in range(H):
        step = mu.dist[h][:, :, None, None] * nu.dist[h][:, None, :, None] * env.kernel[h]
        p = (p[:, :, None, None, None] * step[None]).reshape(-1, S)
    return p.ravel()


def _mixed_law(env, mu, nu) -> np.ndarray:
    return sum(w * trajectory_law(env, m, n) for w, m, n in pair_terms(mu, nu))


def _grouped_mi(laws: np.ndarray, weights: np.ndarray, labels) -> float:
    """I(label; trajectory) where trajectories given env i follow laws[i]."""
    pbar = weights @ laws
    total = 0.0
    for lab in dict.fromkeys(labels):
        idx = [i for i, l in enumerate(labels) if l == lab]
        pc = float(weights[idx].sum())
        joint = weights[idx] @ laws[idx]
        mask = joint > 0
        total += float(np.sum(joint[mask] * np.log(joint[mask] / (pc * pbar[mask]))))
    return max(total, 0.0)


def mutual_info_trajectory_enum(belief, mu, nu) -> float:
    """Exact I(E; trajectory) by summing over every trajectory."""
    envs, w, exact = posterior_particles(belief)
    _check_enumerable(envs[0])
    laws = np.stack([_mixed_law(e, mu, nu) for e in envs])
    return _grouped_mi(laws, w, list(range(len(envs))))


def mutual_info_compressed(belief, partition, mu, nu, mc_samples: int | None = None, seed: int = 0) -> float:
    """I(compressed env; trajectory) from the joint law of (cell id, trajectory)."""
    envs, w, _ = posterior_particles(belief, mc_samples, seed)
    _check_enumerable(envs[0])
    labels = [partition.compress(e)[0] for e in envs]
    laws = np.stack([_mixed_law(e, mu, nu) for e in envs])
    return _grouped_mi(laws, w, labels)


# ---------------------------------------------------------------------------
# information ratios


def joint_info_ratio(belief, mu, nu, mc_samples: int | None = None, seed: int = 0) -> InfoRatioReport:
    envs, w, exact = posterior_particles(belief, mc_samples, seed)
    vals = np.array([mixed_value(e, nash_cached(e)[0], nu) - mixed_value(e, mu, nu) for e in envs])
    est = weighted_estimate(vals, w, exact)
    return make_report(est.value, mutual_info_trajectory(belief, mu, nu), None if exact else est.stderr)


def _require_markov(mu) -> MarkovPolicy:
    if not isinstance(mu, MarkovPolicy):
        raise InvalidArgument("the best-responded policy must be a realized Markov policy")
    return mu


def marginal_info_ratio(belief, mu, nu, mc_samples: int | None = None, seed: int = 0) -> InfoRatioReport:
    mu = _require_markov(mu)
    envs, w, exact = posterior_particles(belief, mc_samples, seed)
    vals = np.array([mixed_value(e, mu, nu) - best_response_min(e, mu)[1].at_start(e) for e in envs])
    est = weighted_estimate(vals, w, exact)
    return make_report(est.value, mutual_info_trajectory(belief, mu, nu), None if exact else est.stderr)


def compressed_joint_ratio(belief, partition, mu, nu, mc_samples: int | None = None, seed: int = 0) -> InfoRatioReport:
    envs, w, exact = posterior_particles(belief, mc_samples, seed)
    vals = []
    for e in envs:
        ref = partition.compress(e)[1]
        vals.append(mixed_value(ref, nash_cached(e)[0], nu) - mixed_value(ref, mu, nu))
    est = weighted_estimate(np.array(vals), w, exact)
    mi = mutual_info_compressed(belief, partition, mu, nu, mc_samples, seed)
    return make_report(est.value, mi, None if exact else est.stderr)


def compressed_marginal_ratio(belief, partition, mu, nu, mc_samples: int | None = None, seed: int = 0) -> InfoRatioReport:
    mu = _require_markov(mu)
    envs, w, exact = posterior_particles(belief, mc_samples, seed)
    vals = []
    for e in envs:
        ref = partition.compress(e)[1]
        br = best_response_min(e, mu)[0]
        vals.append(mixed_value(ref, mu, nu) - evaluate_values(ref, mu, br).at_start(ref))
    est = weighted_estimate(np.array(vals), w, exact)
    mi = mutual_info_compressed(belief, partition, mu, nu, mc_samples, seed)
    return make_report(est.value, mi, None if exact else est.stderr)
