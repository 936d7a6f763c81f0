"""Posterior beliefs over transition kernels.

Both families are kernel-shape agnostic: a zero-sum kernel has rows indexed
``(h, s, a, b)`` and a general-sum kernel rows indexed ``(h, s, joint_action)``.
Environments only need ``kernel``, ``reward``, ``initial_state`` and
``with_kernel``.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.special import digamma, logsumexp

from ._seeding import rng
from .errors import DegeneratePosterior, InvalidArgument
from .game import TabularZeroSumMG, evaluate_values


class KLSign(str, Enum):
    BONUS = "bonus"
    PENALTY = "penalty"


@dataclass(frozen=True, eq=False)
class FiniteSupportBelief:
    candidates: tuple
    log_weights: np.ndarray
    _stack: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        cands = tuple(self.candidates)
        if not cands:
            raise InvalidArgument("belief needs at least one candidate")
        first = cands[0]
        for c in cands[1:]:
            if c.kernel.shape != first.kernel.shape or c.initial_state != first.initial_state:
                raise InvalidArgument("candidates must share dimensions and initial state")
            if not np.array_equal(c.reward, first.reward):
                raise InvalidArgument("candidates must share rewards")
        lw = np.array(self.log_weights, dtype=float).ravel()
        if lw.shape != (len(cands),) or np.isnan(lw).any() or np.isposinf(lw).any():
            raise InvalidArgument("one finite or -inf log-weight per candidate is required")
        total = logsumexp(lw)
        if not np.isfinite(total):
            raise DegeneratePosterior("all candidates have zero weight")
        lw = lw - total
        lw.setflags(write=False)
        stack = self._stack
        if stack is None:
            stack = np.stack([c.kernel for c in cands])
            stack.setflags(write=False)
        object.__setattr__(self, "candidates", cands)
        object.__setattr__(self, "log_weights", lw)
        object.__setattr__(self, "_stack", stack)

    @classmethod
    def uniform(cls, candidates) -> "FiniteSupportBelief":
        return cls(tuple(candidates), np.zeros(len(candidates)))

    @classmethod
    def from_step_factors(cls, template, step_kernels, step_weights=None) -> "FiniteSupportBelief":
        """Product prior over per-step kernel choices.

        ``step_kernels[h]`` lists the alternative kernels for step ``h``; the
        candidate set is their Cartesian product and its weight the product of
        per-step weights. A product prior stays a product under posterior
        updates because the trajectory likelihood factorizes over steps.
        """
        H = template.kernel.shape[0]
        if len(step_kernels) != H:
            raise InvalidArgument("one list of kernels per step is required")
        if step_weights is None:
            step_weights = [np.full(len(ks), 1.0 / len(ks)) for ks in step_kernels]
        cands, logw = [], []
        for choice in itertools.product(*(range(len(ks)) for ks in step_kernels)):
            kernel = np.stack([np.asarray(step_kernels[h][c], dtype=float) for h, c in enumerate(choice)])
            cands.append(template.with_kernel(kernel))
            with np.errstate(divide="ignore"):
                logw.append(sum(np.log(step_weights[h][c]) for h, c in enumerate(choice)))
        return cls(tuple(cands), np.array(logw))

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def template(self):
        return self.candidates[0]

    @property
    def kernels(self) -> np.ndarray:
        return self._stack

    def with_log_weights(self, log_weights) -> "FiniteSupportBelief":
        return FiniteSupportBelief(self.candidates, log_weights, self._stack)


@dataclass(frozen=True, eq=False)
class DirichletBelief:
    alpha: np.ndarray
    template: object

    def __post_init__(self):
        a = np.array(self.alpha, dtype=float)
        if a.shape != self.template.kernel.shape:
            raise InvalidArgument("alpha must match the template kernel shape")
        if not (a > 0).all() or not np.isfinite(a).all():
            raise InvalidArgument("all Dirichlet parameters must be positive and finite")
        a.setflags(write=False)
        object.__setattr__(self, "alpha", a)

    @classmethod
    def symmetric(cls, template, concentration: float = 1.0) -> "DirichletBelief":
        return cls(np.full(template.kernel.shape, float(concentration)), template)


@dataclass(frozen=True)
class MeanEnvironment:
    env: TabularZeroSumMG
    lam: float
    sign: KLSign


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float = 0.0


def _as_trajectories(trajectory):
    if trajectory is None:
        return []
    if hasattr(trajectory, "transitions"):
        return [trajectory]
    return list(trajectory)


def posterior_update(belief, trajectory):
    """Condition on one trajectory or a list of trajectories."""
    trajs = _as_trajectories(trajectory)
    if not trajs:
        return belief
    if isinstance(belief, FiniteSupportBelief):
        loglik = np.zeros(len(belief.candidates))
        with np.errstate(divide="ignore"):
            for traj in trajs:
                for row, s_next in traj.transitions():
                    loglik += np.log(belief.kernels[(slice(None),) + tuple(row) + (s_next,)])
        lw = belief.log_weights + loglik
        if not np.isfinite(lw).any():
            raise DegeneratePosterior("trajectory has zero likelihood under every candidate")
        return belief.with_log_weights(lw)
    alpha = belief.alpha.copy()
    for traj in trajs:
        for row, s_next in traj.transitions():
            alpha[tuple(row) + (s_next,)] += 1.0
    return DirichletBelief(alpha, belief.template)


def _dirichlet_kernel(alpha: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    g = gen.standard_gamma(alpha)
    total = g.sum(axis=-1, keepdims=True)
    mean = alpha / alpha.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        P = np.where(total > 0, g / total, mean)
    return P / P.sum(axis=-1, keepdims=True)


def sample_env(belief, rng_seed: int):
    gen = rng(rng_seed)
    if isinstance(belief, FiniteSupportBelief):
        idx = int(gen.choice(len(belief.candidates), p=belief.weights))
        return belief.candidates[idx]
    return belief.template.with_kernel(_dirichlet_kernel(belief.alpha, gen))


def mean_kernel(belief) -> np.ndarray:
    if isinstance(belief, FiniteSupportBelief):
        return np.tensordot(belief.weights, belief.kernels, axes=1)
    return belief.alpha / belief.alpha.sum(axis=-1, keepdims=True)


def _xlogx_ratio(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(p > 0, p * np.log(p / q), 0.0)


def expected_kl_table(belief) -> np.ndarray:
    """E[KL(P_row || mean row)] for every kernel row."""
    if isinstance(belief, FiniteSupportBelief):
        w = belief.weights
        live = w > 0
        Pbar = mean_kernel(belief)
        kl = _xlogx_ratio(belief.kernels[live], Pbar[None]).sum(axis=-1)
        return np.maximum(np.tensordot(w[live], kl, axes=1), 0.0)
    a = belief.alpha
    a0 = a.sum(axis=-1, keepdims=True)
    m = a / a0
    val = (m * (digamma(a + 1.0) - digamma(a0 + 1.0))).sum(axis=-1) - (m * np.log(m)).sum(axis=-1)
    return np.maximum(val, 0.0)


def expected_kl_to_mean(belief, h: int, s: int, *actions: int) -> float:
    return float(expected_kl_table(belief)[(h, s) + tuple(actions)])


def build_mean_env(belief, lam: float, sign: KLSign = KLSign.BONUS) -> MeanEnvironment:
    if lam < 0:
        raise InvalidArgument("lambda must be nonnegative")
    sign = KLSign(sign)
    template = belief.template
    reward = np.array(template.reward, dtype=float)
    if lam > 0:
        shift = lam * expected_kl_table(belief)
        reward = reward + shift if sign is KLSign.BONUS else reward - shift
    env = TabularZeroSumMG(mean_kernel(belief), reward, template.initial_state, bounded_rewards=False)
    return MeanEnvironment(env, float(lam), sign)


def posterior_particles(belief, mc_samples: int | None = None, seed: int = 0):
    """Weighted environments representing the posterior.

    Finite support returns the live candidates with their exact weights; a
    Dirichlet belief returns ``mc_samples`` equally weighted draws.
    """
    if isinstance(belief, FiniteSupportBelief):
        w = belief.weights
        idx = np.flatnonzero(w > 0)
        return [belief.candidates[i] for i in idx], w[idx], True
    if not mc_samples:
        raise InvalidArgument("Dirichlet beliefs require a positive sample count")
    gen = rng(seed)
    envs = [belief.template.with_kernel(_dirichlet_kernel(belief.alpha, gen)) for _ in range(mc_samples)]
    return envs, np.full(mc_samples, 1.0 / mc_samples), False


def weighted_estimate(values: np.ndarray, weights: np.ndarray, exact: bool) -> Estimate:
    mean = float(weights @ values)
    if exact or len(values) < 2:
        return Estimate(mean, 0.0)
    return Estimate(mean, float(np.std(values, ddof=1) / np.sqrt(len(values))))


def expected_value(belief, mu, nu, num_samples: int | None = None, seed: int = 0) -> Estimate:
    envs, w, exact = posterior_particles(belief, num_samples, seed)
    vals = np.array([evaluate_values(e, mu, nu).at_start(e) for e in envs])
    return weighted_estimate(vals, w, exact)


# ---------------------------------------------------------------------------
# JSON


def _env_doc_to_obj(doc, base: Path | None):
    from .general_sum import gs_env_from_dict
    from .game import env_from_dict

    if "path" in doc:
        p = Path(doc["path"])
        if base is not None and not p.is_absolute():
            p = base / p
        doc = json.loads(p.read_text())
    return gs_env_from_dict(doc) if "num_players" in doc else env_from_dict(doc)


def _env_obj_to_doc(env) -> dict:
    from .general_sum import TabularGeneralSumMG, gs_env_to_dict
    from .game import env_to_dict

    return gs_env_to_dict(env) if isinstance(env, TabularGeneralSumMG) else env_to_dict(env)


def belief_to_dict(belief) -> dict:
    if isinstance(belief, FiniteSupportBelief):
        return {
            "type": "finite",
            "candidates": [_env_obj_to_doc(c) for c in belief.candidates],
            "log_weights": belief.log_weights.tolist(),
        }
    return {"type": "dirichlet", "alpha": belief.alpha.tolist(), "template": _env_obj_to_doc(belief.template)}


def belief_from_dict(doc: dict, base: Path | None = None):
    kind = doc.get("type")
    if kind == "finite":
        cands = [_env_doc_to_obj(c, base) for c in doc["candidates"]]
        lw = doc.get("log_weights")
        if lw is None:
            lw = np.log(np.asarray(doc["weights"], dtype=float)) if "weights" in doc else np.zeros(len(cands))
        return FiniteSupportBelief(tuple(cands), np.asarray(lw, dtype=float))
    if kind == "dirichlet":
        template = _env_doc_to_obj(doc["template"], base)
        if "alpha" in doc:
            alpha = np.asarray(doc["alpha"], dtype=float)
        else:
            alpha = np.full(template.kernel.shape, float(doc.get("concentration", 1.0)))
        return DirichletBelief(alpha, template)
    raise InvalidArgument(f"unknown belief type {kind!r}")
