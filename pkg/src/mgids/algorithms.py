"""Per-episode policy selection: MAIDS, Reg-MAIDS, Compressed-MAIDS, Thompson sampling, uniform."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum

import numpy as np

from ._seeding import derive_seed
from .belief import KLSign, build_mean_env, posterior_particles, sample_env
from .errors import InvalidArgument
from .game import (
    MarkovPolicy,
    PolicyMixture,
    Side,
    best_response_min,
    evaluate_values,
    nash_cached,
    solve_nash,
)
from .info import MI_FLOOR, MIContext, _check_enumerable, trajectory_law


class Algorithm(str, Enum):
    MAIDS = "maids"
    REG_MAIDS = "reg_maids"
    COMPRESSED_MAIDS = "compressed_maids"
    THOMPSON = "thompson"
    UNIFORM = "uniform"


class LearningTarget(str, Enum):
    FULL = "full"
    COMPRESSED = "compressed"


def theorem_lambda(S: int, H: int, K: int) -> float:
    """Zero-sum regularization weight sqrt(2 K H^2 / (S ln(SKH)))."""
    if S * K * H <= 1:
        raise InvalidArgument("the schedule needs S*K*H > 1")
    return math.sqrt(2.0 * K * H * H / (S * math.log(S * K * H)))


def theorem_lambda_gs(S: int, H: int, K: int) -> float:
    """General-sum regularization weight sqrt(H K^2 / (S ln(SKH)))."""
    if S * K * H <= 1:
        raise InvalidArgument("the schedule needs S*K*H > 1")
    return math.sqrt(H * K * K / (S * math.log(S * K * H)))


@dataclass(frozen=True)
class AlgorithmConfig:
    algorithm: Algorithm
    lam: float | None = None
    lam_tilde: float | None = None
    candidate_count: int = 4
    mixture_grid: int = 4
    epsilon: float = 0.0
    mc_samples: int = 64
    learning_target: LearningTarget = LearningTarget.FULL
    # include the posterior-mean NE among MAIDS candidates
    mean_env_candidate: bool = True

    def __post_init__(self):
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
        target = LearningTarget(self.learning_target)
        if self.algorithm is Algorithm.COMPRESSED_MAIDS:
            target = LearningTarget.COMPRESSED
        object.__setattr__(self, "learning_target", target)
        for name in ("lam", "lam_tilde"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise InvalidArgument(f"{name} must be nonnegative")
        if self.candidate_count < 1 or self.mixture_grid < 1 or self.mc_samples < 1:
            raise InvalidArgument("candidate_count, mixture_grid and mc_samples must be positive")
        if self.epsilon < 0:
            raise InvalidArgument("epsilon must be nonnegative")
        if target is LearningTarget.COMPRESSED and self.algorithm is not Algorithm.COMPRESSED_MAIDS:
            raise InvalidArgument("the compressed learning target goes with Compressed-MAIDS only")

    def resolved(self, S: int, H: int, K: int) -> "AlgorithmConfig":
        """Fill unset regularization weights from the zero-sum schedule."""
        lam = theorem_lambda(S, H, K) if self.lam is None else self.lam
        lam_t = lam if self.lam_tilde is None else self.lam_tilde
        return replace(self, lam=lam, lam_tilde=lam_t)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["algorithm"] = self.algorithm.value
        d["learning_target"] = self.learning_target.value
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "AlgorithmConfig":
        return cls(**doc)


@dataclass(frozen=True)
class EpisodePolicyPair:
    mu: MarkovPolicy
    nu: MarkovPolicy
    diagnostics: dict = field(default_factory=dict)
    mu_mixture: PolicyMixture | None = None
    nu_mixture: PolicyMixture | None = None


def _sample_seed(rng_seed: int, i: int) -> int:
    return derive_seed(rng_seed, 0, i)


def ts_select_max(belief, rng_seed: int) -> MarkovPolicy:
    return nash_cached(sample_env(belief, _sample_seed(rng_seed, 0)))[0]


def ts_select_min(belief, mu: MarkovPolicy, rng_seed: int) -> MarkovPolicy:
    return best_response_min(sample_env(belief, _sample_seed(rng_seed, 0)), mu)[0]


def ts_proxy_max(belief, mc_samples: int | None = None, seed: int = 0) -> PolicyMixture:
    """Posterior mixture of candidate Nash policies (exact for finite support)."""
    envs, w, _ = posterior_particles(belief, mc_samples, seed)
    return PolicyMixture(tuple(nash_cached(e)[0] for e in envs), w)


def ts_proxy_min(belief, mu: MarkovPolicy, mc_samples: int | None = None, seed: int = 0) -> PolicyMixture:
    envs, w, _ = posterior_particles(belief, mc_samples, seed)
    return PolicyMixture(tuple(best_response_min(e, mu)[0] for e in envs), w)


def uniform_baseline(dims, rng_seed: int = 0) -> EpisodePolicyPair:
    H, S, A, B = dims[:4]
    return EpisodePolicyPair(
        MarkovPolicy.uniform(Side.MAX, H, S, A),
        MarkovPolicy.uniform(Side.MIN, H, S, B),
        {"algorithm": Algorithm.UNIFORM.value},
    )


def thompson_select(belief, rng_seed: int) -> EpisodePolicyPair:
    mu = ts_select_max(belief, derive_seed(rng_seed, 1))
    nu = ts_select_min(belief, mu, derive_seed(rng_seed, 2))
    return EpisodePolicyPair(mu, nu, {"algorithm": Algorithm.THOMPSON.value})


def reg_maids_select(belief, cfg: AlgorithmConfig) -> EpisodePolicyPair:
    if cfg.lam is None or cfg.lam_tilde is None:
        raise InvalidArgument("Reg-MAIDS needs resolved lambda values; call cfg.resolved(...)")
    bonus = build_mean_env(belief, cfg.lam, KLSign.BONUS).env
    mu, _, values = solve_nash(bonus)
    penalty = build_mean_env(belief, cfg.lam_tilde, KLSign.PENALTY).env
    nu, _ = best_response_min(penalty, mu)
    diag = {
        "algorithm": Algorithm.REG_MAIDS.value,
        "lambda": cfg.lam,
        "lambda_tilde": cfg.lam_tilde,
        "bonus_env_value": values.at_start(bonus),
    }
    return EpisodePolicyPair(mu, nu, diag)


# ---------------------------------------------------------------------------
# candidate-mixture IDS


def simplex_grid(m: int, G: int) -> np.ndarray:
    """All weight vectors with entries in {0, 1/G, ..., 1}; vertex of index 0 first."""
    rows = []

    def rec(prefix, remaining):
        if len(prefix) == m - 1:
            rows.append(prefix + [remaining])
            return
        for c in range(remaining, -1, -1):
            rec(prefix + [c], remaining - c)

    rec([], G)
    return np.array(rows, dtype=float) / G


def _dedupe(policies: list[MarkovPolicy]) -> list[MarkovPolicy]:
    out: list[MarkovPolicy] = []
    for p in policies:
        if not any(p.same_as(q) for q in out):
            out.append(p)
    return out


def _mixture(components: list[MarkovPolicy], w: np.ndarray):
    keep = np.flatnonzero(w > 0)
    if keep.size == 1:
        return components[int(keep[0])]
    return PolicyMixture(tuple(components[i] for i in keep), w[keep] / w[keep].sum())


def _start(env, mu, nu) -> float:
    return evaluate_values(env, mu, nu).at_start(env)


class _FullTarget:
    """Numerators and MI for the full-environment learning target (MI linear in mixtures)."""

    def __init__(self, belief, envs, weights):
        self.ctx = MIContext.of(belief)
        self.envs, self.w = envs, weights

    def joint_terms(self, mus, nus):
        N = np.zeros((len(mus), len(nus)))
        for e, we in zip(self.envs, self.w):
            star = nash_cached(e)[0]
            base = np.array([_start(e, star, n) for n in nus])
            vals = np.array([[_start(e, m, n) for n in nus] for m in mus])
            N += we * (base[None, :] - vals)
        I = np.array([[self.ctx.mi(m, n) for n in nus] for m in mus])
        return N, lambda WA, WB: np.maximum(WA @ I @ WB.T, 0.0)

    def marginal_terms(self, mu, nus):
        N = np.zeros(len(nus))
        for e, we in zip(self.envs, self.w):
            br = best_response_min(e, mu)[1].at_start(e)
            N += we * (np.array([_start(e, mu, n) for n in nus]) - br)
        I = np.array([self.ctx.mi(mu, n) for n in nus])
        return N, lambda WB: np.maximum(WB @ I, 0.0)


class _CompressedTarget:
    """Numerators in the cell reference env and MI about the cell id, by enumeration."""

    def __init__(self, envs, weights, partition):
        _check_enumerable(envs[0])
        self.envs, self.w = envs, weights
        self.refs = [partition.compress(e)[1] for e in envs]
        labels = [partition.compress(e)[0] for e in envs]
        cells = list(dict.fromkeys(labels))
        self.membership = np.array([[lab == c for c in cells] for lab in labels], dtype=float)

    def _mi(self, laws: np.ndarray) -> np.ndarray:
        # laws: (..., C, T) trajectory law per particle
        wl = laws * self.w[:, None]
        pbar = wl.sum(axis=-2)
        joint = np.einsum("...ct,ck->...kt", wl, self.membership)
        pcell = self.w @ self.membership
        denom = pcell[:, None] * pbar[..., None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(joint > 0, joint * np.log(joint / denom), 0.0)
        return np.maximum(terms.sum(axis=(-1, -2)), 0.0)

    def joint_terms(self, mus, nus):
        N = np.zeros((len(mus), len(nus)))
        for e, ref, we in zip(self.envs, self.refs, self.w):
            star = nash_cached(e)[0]
            base = np.array([_start(ref, star, n) for n in nus])
            vals = np.array([[_start(ref, m, n) for n in nus] for m in mus])
            N += we * (base[None, :] - vals)
        laws = np.array([[[trajectory_law(e, m, n) for e in self.envs] for n in nus] for m in mus])

        def mi(WA, WB):
            out = np.empty((len(WA), len(WB)))
            for i, wa in enumerate(WA):
                mixed = np.einsum("a,abct->bct", wa, laws)
                out[i] = self._mi(np.einsum("qb,bct->qct", WB, mixed))
            return out

        return N, mi

    def marginal_terms(self, mu, nus):
        N = np.zeros(len(nus))
        for e, ref, we in zip(self.envs, self.refs, self.w):
            br = best_response_min(e, mu)[0]
            N += we * (np.array([_start(ref, mu, n) for n in nus]) - _start(ref, mu, br))
        laws = np.array([[trajectory_law(e, mu, n) for e in self.envs] for n in nus])
        return N, lambda WB: self._mi(np.einsum("qb,bct->qct", WB, laws))


def _ratios(num: np.ndarray, mi: np.ndarray):
    inf = mi <= MI_FLOOR
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(inf, np.inf, num * num / np.where(inf, 1.0, mi))
    return r, inf


def _argmin_lex(primary: np.ndarray, secondary: np.ndarray) -> int:
    """Index minimizing primary, then secondary, then position (1e-12 ties)."""
    best = primary.min()
    if np.isfinite(best):
        tie = np.abs(primary - best) <= 1e-12 * max(1.0, abs(best))
    else:
        tie = primary == best
    idx = np.flatnonzero(tie)
    sec = secondary[idx]
    smin = sec.min()
    idx = idx[np.abs(sec - smin) <= 1e-12 * max(1.0, abs(smin))]
    return int(idx[0])


def _step_one_candidates(belief, cfg: AlgorithmConfig, rng_seed: int):
    """Posterior samples, the reward-free mean env, and deduplicated candidate sets.

    Max side: Nash policies of the samples (and of the mean env). Min side:
    their Nash counterparts plus mean-env best responses to each max candidate.
    """
    samples = [sample_env(belief, _sample_seed(rng_seed, i)) for i in range(cfg.candidate_count)]
    mean_env = build_mean_env(belief, 0.0).env
    mus = [nash_cached(e)[0] for e in samples]
    nus = [nash_cached(e)[1] for e in samples]
    if cfg.mean_env_candidate:
        mean_nash = solve_nash(mean_env)
        mus.append(mean_nash[0])
        nus.append(mean_nash[1])
        nus.extend(best_response_min(mean_env, m)[0] for m in mus)
    return samples, mean_env, _dedupe(mus), _dedupe(nus)


def _ids_select(belief, cfg: AlgorithmConfig, rng_seed: int, partition=None) -> EpisodePolicyPair:
    G = cfg.mixture_grid
    samples, mean_env, mus, nus = _step_one_candidates(belief, cfg, rng_seed)
    envs, w, _ = posterior_particles(belief, cfg.mc_samples, derive_seed(rng_seed, 3))
    if cfg.algorithm is Algorithm.COMPRESSED_MAIDS:
        if partition is None:
            raise InvalidArgument("Compressed-MAIDS needs a partition")
        target = _CompressedTarget(envs, w, partition)
    else:
        target = _FullTarget(belief, envs, w)

    # step 1: max-player minimizes the worst-case joint ratio over the grid
    WA, WB = simplex_grid(len(mus), G), simplex_grid(len(nus), G)
    N, mi_fn = target.joint_terms(mus, nus)
    num = WA @ N @ WB.T
    ratio, inf = _ratios(num, mi_fn(WA, WB))
    worst_col = np.array([_argmin_lex(-ratio[i], -num[i]) for i in range(len(WA))])
    worst_ratio = ratio[np.arange(len(WA)), worst_col]
    worst_num = num[np.arange(len(WA)), worst_col]
    fallback_max = bool(np.isinf(worst_ratio).all())
    if fallback_max:
        worst_num = num.max(axis=1)
        ia = _argmin_lex(worst_num, np.zeros(len(WA)))
    else:
        ia = _argmin_lex(worst_ratio, worst_num)
    mu_mix = _mixture(mus, WA[ia])
    mu = mu_mix if isinstance(mu_mix, MarkovPolicy) else mu_mix.realize(derive_seed(rng_seed, 4))

    # step 2: min-player minimizes the marginal ratio against the realized mu
    nus2 = [best_response_min(e, mu)[0] for e in samples]
    if cfg.mean_env_candidate:
        nus2.append(best_response_min(mean_env, mu)[0])
    nus2 = _dedupe(nus2)
    WB2 = simplex_grid(len(nus2), G)
    N2, mi2_fn = target.marginal_terms(mu, nus2)
    num2 = WB2 @ N2
    ratio2, _ = _ratios(num2, mi2_fn(WB2))
    fallback_min = bool(np.isinf(ratio2).all())
    ib = _argmin_lex(num2, np.zeros(len(WB2))) if fallback_min else _argmin_lex(ratio2, num2)
    nu_mix = _mixture(nus2, WB2[ib])
    nu = nu_mix if isinstance(nu_mix, MarkovPolicy) else nu_mix.realize(derive_seed(rng_seed, 5))

    diag = {
        "algorithm": cfg.algorithm.value,
        "max_candidates": len(mus),
        "min_candidates": len(nus2),
        "mu_weights": WA[ia].tolist(),
        "nu_weights": WB2[ib].tolist(),
        "worst_joint_ratio": float(worst_ratio[ia]),
        "joint_numerator": float(worst_num[ia]),
        "marginal_ratio": float(ratio2[ib]),
        "marginal_numerator": float(num2[ib]),
        "fallback_max": fallback_max,
        "fallback_min": fallback_min,
    }
    return EpisodePolicyPair(
        mu,
        nu,
        diag,
        mu_mix if isinstance(mu_mix, PolicyMixture) else None,
        nu_mix if isinstance(nu_mix, PolicyMixture) else None,
    )


def maids_select(belief, cfg: AlgorithmConfig, rng_seed: int) -> EpisodePolicyPair:
    if cfg.algorithm is not Algorithm.MAIDS:
        raise InvalidArgument("maids_select needs a MAIDS configuration")
    return _ids_select(belief, cfg, rng_seed)


def compressed_maids_select(belief, cfg: AlgorithmConfig, partition, rng_seed: int = 0) -> EpisodePolicyPair:
    if cfg.algorithm is not Algorithm.COMPRESSED_MAIDS:
        raise InvalidArgument("compressed_maids_select needs a Compressed-MAIDS configuration")
    return _ids_select(belief, cfg, rng_seed, partition)


def grid_worst_joint_ratio(belief, cfg: AlgorithmConfig, rng_seed: int, mu_weights=None):
    """Worst-case joint ratio over the min-side grid for each max-side grid point.

    Rebuilds the same candidate sets as maids_select; used to audit grid optimality.
    Returns (max-side grid, worst ratio per grid row, max candidates).
    """
    G = cfg.mixture_grid
    _, _, mus, nus = _step_one_candidates(belief, cfg, rng_seed)
    envs, w, _ = posterior_particles(belief, cfg.mc_samples, derive_seed(rng_seed, 3))
    target = _FullTarget(belief, envs, w)
    WA, WB = simplex_grid(len(mus), G), simplex_grid(len(nus), G)
    N, mi_fn = target.joint_terms(mus, nus)
    ratio, _ = _ratios(WA @ N @ WB.T, mi_fn(WA, WB))
    return WA, ratio.max(axis=1), mus


def select_policies(belief, cfg: AlgorithmConfig, rng_seed: int, dims=None, partition=None) -> EpisodePolicyPair:
    alg = cfg.algorithm
    if alg is Algorithm.REG_MAIDS:
        return reg_maids_select(belief, cfg)
    if alg is Algorithm.MAIDS:
        return maids_select(belief, cfg, rng_seed)
    if alg is Algorithm.COMPRESSED_MAIDS:
        return compressed_maids_select(belief, cfg, partition, rng_seed)
    if alg is Algorithm.THOMPSON:
        return thompson_select(belief, rng_seed)
    return uniform_baseline(dims if dims is not None else belief.template.dims, rng_seed)
