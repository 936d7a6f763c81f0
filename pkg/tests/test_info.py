import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mgids.algorithms import ts_proxy_max, ts_proxy_min
from mgids.belief import FiniteSupportBelief, mean_kernel, posterior_update
from mgids.compression import CandidatePartition, build_hard_partition
from mgids.errors import EnumerationTooLarge
from mgids.game import MarkovPolicy, PolicyMixture, Side, TabularZeroSumMG, Trajectory, best_response_min, random_policy, solve_nash
from mgids.info import (
    InfoRatioReport,
    compressed_joint_ratio,
    compressed_marginal_ratio,
    joint_info_ratio,
    make_report,
    marginal_info_ratio,
    mutual_info_compressed,
    mutual_info_trajectory,
    mutual_info_trajectory_enum,
)
from builders import random_dims, random_product_belief
from oracles import exact_episode_mi, trajectory_enumeration_value


def _policies(belief, seed):
    H, S, A, B = belief.template.dims
    return random_policy(Side.MAX, H, S, A, seed), random_policy(Side.MIN, H, S, B, seed + 1)


class TestMutualInformation:
    def test_point_mass(self):
        b = random_product_belief(0, options=1)
        mu, nu = _policies(b, 1)
        assert mutual_info_trajectory(b, mu, nu) == 0.0
        assert mutual_info_trajectory_enum(b, mu, nu) == 0.0

    def test_identical_kernels(self):
        b = random_product_belief(0, options=1)
        twin = FiniteSupportBelief(b.candidates * 2, np.log([0.3, 0.7]))
        mu, nu = _policies(b, 1)
        assert mutual_info_trajectory(twin, mu, nu) == 0.0
        assert mutual_info_trajectory_enum(twin, mu, nu) == pytest.approx(0.0, abs=1e-15)

    def test_perfect_identification(self):
        P = np.zeros((2, 1, 2, 1, 1, 2))
        P[0, 0, :, 0, 0] = [1.0, 0.0]
        P[1, 0, :, 0, 0] = [0.0, 1.0]
        envs = [TabularZeroSumMG(k, np.zeros((1, 2, 1, 1))) for k in P]
        b = FiniteSupportBelief(tuple(envs), np.log([0.3, 0.7]))
        mu = MarkovPolicy.uniform(Side.MAX, 1, 2, 1)
        nu = MarkovPolicy.uniform(Side.MIN, 1, 2, 1)
        entropy = -(0.3 * math.log(0.3) + 0.7 * math.log(0.7))
        assert mutual_info_trajectory_enum(b, mu, nu) == pytest.approx(entropy, abs=1e-12)
        assert mutual_info_trajectory(b, mu, nu) == pytest.approx(entropy, abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31))
    def test_occupancy_formula_matches_enumeration(self, seed):
        g = np.random.default_rng(seed)
        H, S, A, B = random_dims(g, 2, 2)
        b = random_product_belief(seed, H, S, A, B, options=int(g.integers(1, 4)))
        mu, nu = _policies(b, seed % 1000)
        assert mutual_info_trajectory(b, mu, nu) == pytest.approx(mutual_info_trajectory_enum(b, mu, nu), abs=1e-9)

    @pytest.mark.parametrize("seed", range(10))
    def test_enumeration_matches_path_oracle(self, seed):
        b = random_product_belief(seed, 2, 2, 2, 2, options=2)
        mu, nu = _policies(b, seed)
        ref = exact_episode_mi([c.kernel for c in b.candidates], b.weights, 0, mu.dist, nu.dist)
        assert mutual_info_trajectory_enum(b, mu, nu) == pytest.approx(ref, abs=1e-12)

    def test_enumeration_guard(self):
        b = random_product_belief(0, H=4, S=6, A=6, B=6, options=1)
        mu, nu = _policies(b, 0)
        with pytest.raises(EnumerationTooLarge):
            mutual_info_trajectory_enum(b, mu, nu)

    def test_mixture_policies_are_linear(self):
        b = random_product_belief(4)
        mus = [_policies(b, s)[0] for s in (1, 2)]
        nu = _policies(b, 3)[1]
        mix = PolicyMixture(tuple(mus), np.array([0.25, 0.75]))
        parts = [mutual_info_trajectory(b, m, nu) for m in mus]
        assert mutual_info_trajectory(b, mix, nu) == pytest.approx(0.25 * parts[0] + 0.75 * parts[1], abs=1e-12)

    def test_chain_rule_over_episodes(self):
        # H=1, S=2: three episodes, mutual information with the whole data set by enumeration
        kernels = np.array([[0.8, 0.2], [0.3, 0.7], [0.5, 0.5]])
        envs = []
        for row in kernels:
            P = np.broadcast_to(row, (1, 2, 1, 1, 2)).copy()
            envs.append(TabularZeroSumMG(P, np.zeros((1, 2, 1, 1))))
        w = np.array([0.2, 0.5, 0.3])
        prior = FiniteSupportBelief(tuple(envs), np.log(w))
        mu = MarkovPolicy.uniform(Side.MAX, 1, 2, 1)
        nu = MarkovPolicy.uniform(Side.MIN, 1, 2, 1)
        K = 3
        joint = 0.0
        for outcome in itertools.product(range(2), repeat=K):
            like = np.array([np.prod([r[o] for o in outcome]) for r in kernels])
            pbar = w @ like
            joint += float(np.sum(w * like * np.log(like / pbar)))
        summed = 0.0
        for k in range(K):
            for history in itertools.product(range(2), repeat=k):
                like = np.array([np.prod([r[o] for o in history]) for r in kernels])
                prob = float(w @ like)
                post = posterior_update(prior, [Trajectory((0, o), (0,), (0,), (0.0,)) for o in history])
                summed += prob * mutual_info_trajectory(post, mu, nu)
        assert summed == pytest.approx(joint, abs=1e-6)


class TestReports:
    def test_floor_flags_infinite(self):
        r = make_report(0.3, 1e-13)
        assert r.infinite and math.isinf(r.ratio)

    def test_ratio_is_square_over_mi(self):
        r = make_report(-0.5, 0.2)
        assert r.ratio == pytest.approx(1.25) and not r.infinite
        assert isinstance(r, InfoRatioReport) and set(r.to_dict()) >= {"ratio", "denominator_mi"}


class TestJointRatio:
    def test_point_mass_at_nash(self):
        b = random_product_belief(0, options=1)
        e = b.candidates[0]
        mu = solve_nash(e)[0]
        r = joint_info_ratio(b, mu, _policies(b, 1)[1])
        assert r.numerator_regret == pytest.approx(0.0, abs=1e-12)
        assert r.denominator_mi == 0.0 and r.infinite

    def test_numerator_matches_direct_evaluation(self):
        b = random_product_belief(3)
        mu, nu = _policies(b, 5)
        ref = 0.0
        for e, w in zip(b.candidates, b.weights):
            star = solve_nash(e)[0]
            ref += w * (
                trajectory_enumeration_value(e.kernel, e.reward, 0, star.dist, nu.dist)
                - trajectory_enumeration_value(e.kernel, e.reward, 0, mu.dist, nu.dist)
            )
        assert joint_info_ratio(b, mu, nu).numerator_regret == pytest.approx(ref, abs=1e-10)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31))
    def test_ratio_nonnegative(self, seed):
        b = random_product_belief(seed)
        mu, nu = _policies(b, seed % 997)
        assert joint_info_ratio(b, mu, nu).ratio >= 0

    def test_ts_proxy_bound_sweep(self):
        g = np.random.default_rng(2024)
        worst = 0.0
        for i in range(200):
            H, S, A, B = random_dims(g)
            b = random_product_belief(int(g.integers(2**31)), H, S, A, B, options=2)
            nu = random_policy(Side.MIN, H, S, B, int(g.integers(2**31)))
            r = joint_info_ratio(b, ts_proxy_max(b), nu)
            cap = 4 * H**3 * S * A * B
            assert r.numerator_regret**2 <= cap * r.denominator_mi + 1e-12
            if not r.infinite:
                worst = max(worst, r.ratio / cap)
        assert worst <= 1.0


class TestMarginalRatio:
    def test_point_mass_best_response(self):
        b = random_product_belief(0, options=1)
        mu = _policies(b, 1)[0]
        br = best_response_min(b.candidates[0], mu)[0]
        assert marginal_info_ratio(b, mu, br).numerator_regret == pytest.approx(0.0, abs=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31))
    def test_numerator_nonnegative(self, seed):
        b = random_product_belief(seed)
        mu, nu = _policies(b, seed % 991)
        assert marginal_info_ratio(b, mu, nu).numerator_regret >= -1e-12

    def test_ts_min_proxy_sweep(self):
        g = np.random.default_rng(77)
        for _ in range(100):
            H, S, A, B = random_dims(g)
            b = random_product_belief(int(g.integers(2**31)), H, S, A, B, options=2)
            mu = random_policy(Side.MAX, H, S, A, int(g.integers(2**31)))
            r = marginal_info_ratio(b, mu, ts_proxy_min(b, mu))
            assert r.numerator_regret**2 <= 4 * H**3 * S * A * B * r.denominator_mi + 1e-12


class TestCompressedRatios:
    def test_one_cell_is_infinite(self):
        b = random_product_belief(1)
        mu, nu = _policies(b, 2)
        part = CandidatePartition.one_cell(b, b.template.with_kernel(mean_kernel(b)))
        assert mutual_info_compressed(b, part, mu, nu) == 0.0
        assert compressed_joint_ratio(b, part, mu, nu).infinite
        assert compressed_marginal_ratio(b, part, mu, nu).infinite

    @pytest.mark.parametrize("seed", range(5))
    def test_identity_compression(self, seed):
        b = random_product_belief(seed)
        mu, nu = _policies(b, seed + 7)
        part = CandidatePartition.identity(b)
        assert mutual_info_compressed(b, part, mu, nu) == pytest.approx(mutual_info_trajectory_enum(b, mu, nu), abs=1e-12)
        full, comp = joint_info_ratio(b, mu, nu), compressed_joint_ratio(b, part, mu, nu)
        assert comp.numerator_regret == pytest.approx(full.numerator_regret, abs=1e-9)
        assert comp.ratio == pytest.approx(full.ratio, rel=1e-9, abs=1e-9)
        fm, cm = marginal_info_ratio(b, mu, nu), compressed_marginal_ratio(b, part, mu, nu)
        assert cm.ratio == pytest.approx(fm.ratio, rel=1e-9, abs=1e-9)

    def test_identity_point_mass_best_response(self):
        b = random_product_belief(0, options=1)
        mu = _policies(b, 3)[0]
        br = best_response_min(b.candidates[0], mu)[0]
        r = compressed_marginal_ratio(b, CandidatePartition.identity(b), mu, br)
        assert r.numerator_regret == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_hard_partition_numerator_shift(self, seed):
        eps = 0.3
        b = random_product_belief(seed, options=3)
        mu, nu = _policies(b, seed)
        part = build_hard_partition(b.template, eps)
        diff = compressed_joint_ratio(b, part, mu, nu).numerator_regret - joint_info_ratio(b, mu, nu).numerator_regret
        assert abs(diff) <= 2 * eps

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31), st.floats(0.05, 2.0))
    def test_data_processing(self, seed, eps):
        b = random_product_belief(seed, options=3, concentration=0.5)
        mu, nu = _policies(b, seed % 983)
        part = build_hard_partition(b.template, eps)
        comp = mutual_info_compressed(b, part, mu, nu)
        assert 0.0 <= comp <= mutual_info_trajectory_enum(b, mu, nu) + 1e-9
