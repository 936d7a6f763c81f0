"""Environment compression: distortion, lattice covers of the simplex, hard partitions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .belief import Estimate, posterior_particles, weighted_estimate
from .errors import EnumerationTooLarge, InvalidArgument
from .game import (
    DETERMINISTIC_GUARD,
    TabularZeroSumMG,
    deterministic_action_tables,
    evaluate_values,
    pairwise_deterministic_values,
)


class PolicyClassMode(str, Enum):
    EXPLICIT = "explicit"
    ALL_DETERMINISTIC = "all_deterministic"


@dataclass(frozen=True)
class PolicyClassSpec:
    mode: PolicyClassMode
    max_policies: tuple = ()
    min_policies: tuple = ()

    def __post_init__(self):
        if self.mode is PolicyClassMode.EXPLICIT and (not self.max_policies or not self.min_policies):
            raise InvalidArgument("explicit policy classes must be nonempty on both sides")

    @classmethod
    def all_deterministic(cls) -> "PolicyClassSpec":
        return cls(PolicyClassMode.ALL_DETERMINISTIC)

    @classmethod
    def explicit(cls, max_policies, min_policies) -> "PolicyClassSpec":
        return cls(PolicyClassMode.EXPLICIT, tuple(max_policies), tuple(min_policies))


def distortion(e: TabularZeroSumMG, e2: TabularZeroSumMG, phi: PolicyClassSpec) -> float:
    """Worst-case absolute start-value difference over a policy class."""
    if e.dims != e2.dims or e.initial_state != e2.initial_state:
        raise InvalidArgument("environments must share dimensions and initial state")
    if not np.array_equal(e.reward, e2.reward):
        raise InvalidArgument("environments must share rewards")
    if phi.mode is PolicyClassMode.ALL_DETERMINISTIC:
        H, S, A, B = e.dims
        mu = deterministic_action_tables(H, S, A)
        nu = deterministic_action_tables(H, S, B)
        if len(mu) * len(nu) > 100 * DETERMINISTIC_GUARD:
            raise EnumerationTooLarge("too many deterministic policy pairs")
        gap = pairwise_deterministic_values(e, mu, nu) - pairwise_deterministic_values(e2, mu, nu)
        return float(np.abs(gap).max())
    return max(
        abs(evaluate_values(e, m, n).at_start(e) - evaluate_values(e2, m, n).at_start(e2))
        for m in phi.max_policies
        for n in phi.min_policies
    )


@dataclass(frozen=True)
class SimplexCover:
    """Lattice {c / n : c in N^S, sum c = n} with largest-remainder assignment."""

    num_states: int
    delta: float
    resolution: int

    @property
    def size(self) -> int:
        return math.comb(self.resolution + self.num_states - 1, self.num_states - 1)

    def centers(self) -> np.ndarray:
        if self.size > 1_000_000:
            raise EnumerationTooLarge("cover too large to list")
        n, S = self.resolution, self.num_states
        out = []

        def rec(prefix, remaining):
            if len(prefix) == S - 1:
                out.append(prefix + [remaining])
                return
            for c in range(remaining, -1, -1):
                rec(prefix + [c], remaining - c)

        rec([], n)
        return np.array(out, dtype=float) / n

    def assign_counts(self, p: np.ndarray) -> np.ndarray:
        """Lattice counts for each row of p (last axis is the simplex)."""
        p = np.asarray(p, dtype=float)
        n = self.resolution
        x = p * n
        base = np.floor(x)
        frac = x - base
        remaining = (n - base.sum(axis=-1)).astype(int)
        order = np.argsort(-frac, axis=-1, kind="stable")
        rank = np.argsort(order, axis=-1, kind="stable")
        counts = base + (rank < remaining[..., None])
        return counts.astype(int)

    def assign(self, p: np.ndarray) -> np.ndarray:
        return self.assign_counts(p) / self.resolution


def simplex_cover(S: int, delta: float) -> SimplexCover:
    if not 0 < delta <= 1:
        raise InvalidArgument("delta must lie in (0, 1]")
    return SimplexCover(int(S), float(delta), math.ceil(S / (2.0 * delta)))


@dataclass(eq=False)
class HardPartition:
    """Cells indexed by per-row lattice centers; references built on first use."""

    epsilon: float
    horizon: int
    cover: SimplexCover
    _references: dict = field(default_factory=dict, repr=False)

    @property
    def delta(self) -> float:
        return self.cover.delta

    @property
    def occupied_cells(self) -> int:
        return len({key[0] for key in self._references})

    def cell_id(self, e: TabularZeroSumMG) -> tuple:
        return tuple(self.cover.assign_counts(e.kernel).ravel().tolist())

    def compress(self, e: TabularZeroSumMG):
        counts = self.cover.assign_counts(e.kernel)
        cid = tuple(counts.ravel().tolist())
        key = (cid, e.reward.tobytes(), e.initial_state)
        ref = self._references.get(key)
        if ref is None:
            ref = e.with_kernel(counts / self.cover.resolution)
            self._references[key] = ref
        return cid, ref


def build_hard_partition(dims, epsilon: float) -> HardPartition:
    """Per-row covers with radius epsilon / (2 H^2). ``dims`` is (H, S, ...) or an env."""
    if epsilon <= 0:
        raise InvalidArgument("epsilon must be positive")
    if isinstance(dims, TabularZeroSumMG):
        dims = dims.dims
    H, S = int(dims[0]), int(dims[1])
    delta = min(1.0, epsilon / (2.0 * H * H))
    return HardPartition(float(epsilon), H, simplex_cover(S, delta))


@dataclass(eq=False)
class CandidatePartition:
    """Partition of a finite candidate set given by explicit labels."""

    candidates: tuple
    labels: tuple
    references: dict
    epsilon: float = math.nan

    def compress(self, e):
        for c, lab in zip(self.candidates, self.labels):
            if c is e:
                return lab, self.references[lab]
        raise InvalidArgument("environment is not one of the partitioned candidates")

    @property
    def occupied_cells(self) -> int:
        return len(set(self.labels))

    @classmethod
    def from_labels(cls, belief, labels, epsilon: float = math.nan) -> "CandidatePartition":
        labels = tuple(labels)
        if len(labels) != len(belief.candidates):
            raise InvalidArgument("one label per candidate is required")
        refs = {}
        for c, lab in zip(belief.candidates, labels):
            refs.setdefault(lab, c)
        return cls(belief.candidates, labels, refs, epsilon)

    @classmethod
    def identity(cls, belief) -> "CandidatePartition":
        return cls.from_labels(belief, range(len(belief.candidates)), 0.0)

    @classmethod
    def one_cell(cls, belief, reference) -> "CandidatePartition":
        return cls(belief.candidates, (0,) * len(belief.candidates), {0: reference})


def compress_env(partition, e):
    return partition.compress(e)


def check_soft_constraint(belief, partition, phi: PolicyClassSpec, samples: int | None = None, seed: int = 0) -> Estimate:
    envs, w, exact = posterior_particles(belief, samples, seed)
    vals = np.array([distortion(e, partition.compress(e)[1], phi) for e in envs])
    return weighted_estimate(vals, w, exact)


def cell_distribution(belief, partition, samples: int | None = None, seed: int = 0) -> dict:
    envs, w, _ = posterior_particles(belief, samples, seed)
    hist: dict = {}
    for e, wi in zip(envs, w):
        cid = partition.compress(e)[0]
        hist[cid] = hist.get(cid, 0.0) + float(wi)
    return hist


def compressed_entropy(belief, partition, samples: int | None = None, seed: int = 0) -> float:
    p = np.array([v for v in cell_distribution(belief, partition, samples, seed).values() if v > 0])
    return float(max(-(p * np.log(p)).sum(), 0.0))


def partition_summary(belief, partition, samples: int | None = None) -> dict:
    out = {
        "epsilon": partition.epsilon,
        "occupied_cells": len(cell_distribution(belief, partition, samples)),
        "entropy_nats": compressed_entropy(belief, partition, samples),
    }
    if isinstance(partition, HardPartition):
        out["delta"] = partition.delta
        out["cover_size"] = partition.cover.size
    return out
