import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mgids.belief import FiniteSupportBelief
from mgids.benchmarks import general_sum_random
from mgids.errors import EnumerationTooLarge, InvalidArgument
from mgids.game import random_zero_sum_mg, solve_nash
from mgids.general_sum import (
    MixedJointPolicy,
    PurePolicyProfileSet,
    TabularGeneralSumMG,
    best_response_gs,
    build_mean_env_gs,
    equilibrium_gap,
    evaluate_values_gs,
    expected_values_gs,
    gs_env_from_dict,
    gs_env_to_dict,
    mutual_info_gs,
    random_general_sum_mg,
    reg_maids_gs_select,
    simulate_episode_gs,
    zero_sum_embedding,
)
from oracles import exact_episode_mi, gs_path_value, joint_table_as_pair


def _random_mixed(env, sets, seed, kind="joint"):
    g = np.random.default_rng(seed)
    if kind == "joint":
        return MixedJointPolicy.joint(sets, g.dirichlet(np.ones(int(np.prod(sets.counts)))).reshape(sets.counts))
    return MixedJointPolicy.product(sets, [g.dirichlet(np.ones(n)) for n in sets.counts])


def _oracle_values(env, pi):
    out = np.zeros(env.num_players)
    for prof in itertools.product(*(range(n) for n in pi.pure_sets.counts)):
        p = pi.probs[prof]
        if p == 0:
            continue
        table = pi.pure_sets.profile_table(env, prof)
        out += p * np.array([gs_path_value(env.kernel, env.reward[i], env.initial_state, table) for i in range(env.num_players)])
    return out


class TestEnvironment:
    def test_validation(self):
        with pytest.raises(InvalidArgument):
            TabularGeneralSumMG(np.full((1, 2, 4, 2), 0.5), np.zeros((2, 1, 2, 4)), (2, 3))
        with pytest.raises(InvalidArgument):
            TabularGeneralSumMG(np.full((1, 2, 4, 2), 0.6), np.zeros((2, 1, 2, 4)), (2, 2))
        with pytest.raises(InvalidArgument):
            TabularGeneralSumMG(np.full((1, 2, 4, 2), 0.5), np.full((2, 1, 2, 4), 2.0), (2, 2))

    def test_round_trip(self):
        env = random_general_sum_mg(3, 2, 2, (2, 2, 2), seed=1)
        back = gs_env_from_dict(gs_env_to_dict(env))
        assert np.array_equal(back.kernel, env.kernel) and back.action_counts == env.action_counts

    def test_profile_guard(self):
        tables = np.zeros((101, 1, 1), dtype=int)
        with pytest.raises(EnumerationTooLarge):
            PurePolicyProfileSet((tables, tables))


class TestValues:
    def test_constant_sum_embedding(self):
        zs = random_zero_sum_mg(2, 2, 2, 2, seed=3)
        env = zero_sum_embedding(zs)
        sets = PurePolicyProfileSet.all_deterministic(env)
        pi = _random_mixed(env, sets, 0)
        assert evaluate_values_gs(env, pi).sum() == pytest.approx(2.0, abs=1e-12)

    @pytest.mark.parametrize("kind", ["joint", "product"])
    def test_matches_path_enumeration(self, kind):
        env = random_general_sum_mg(2, 2, 2, (2, 2), seed=5)
        sets = PurePolicyProfileSet.all_deterministic(env)
        pi = _random_mixed(env, sets, 1, kind)
        assert np.allclose(evaluate_values_gs(env, pi), _oracle_values(env, pi), atol=1e-12)

    def test_point_profile(self):
        env = random_general_sum_mg(3, 2, 2, (2, 2, 2), seed=2)
        sets = PurePolicyProfileSet.all_deterministic(env)
        pi = MixedJointPolicy.point(sets, (3, 7, 11))
        table = sets.profile_table(env, (3, 7, 11))
        ref = [gs_path_value(env.kernel, env.reward[i], 0, table) for i in range(3)]
        assert np.allclose(evaluate_values_gs(env, pi), ref, atol=1e-12)

    def test_monte_carlo(self):
        env = random_general_sum_mg(2, 2, 2, (2, 2), seed=8)
        sets = PurePolicyProfileSet.all_deterministic(env)
        pi = _random_mixed(env, sets, 4)
        n = 20_000
        returns = np.empty((n, 2))
        for k in range(n):
            prof = pi.realize(10 * k)
            traj = simulate_episode_gs(env, sets.profile_table(env, prof), 10 * k + 1)
            returns[k] = np.sum(traj.rewards, axis=0)
        mean, se = returns.mean(axis=0), returns.std(axis=0, ddof=1) / np.sqrt(n)
        assert np.all(np.abs(mean - evaluate_values_gs(env, pi)) <= 3 * se)

    def test_product_realize_is_independent(self):
        env = random_general_sum_mg(2, 1, 1, (2, 2), seed=0)
        sets = PurePolicyProfileSet.all_deterministic(env)
        pi = MixedJointPolicy.product(sets, [np.array([0.3, 0.7]), np.array([0.6, 0.4])])
        draws = np.array([pi.realize(s) for s in range(20_000)])
        freq = np.mean((draws[:, 0] == 1) & (draws[:, 1] == 0))
        assert abs(freq - 0.42) <= 3 * np.sqrt(0.42 * 0.58 / 20_000)


class TestBestResponse:
    def test_single_candidate(self):
        env = random_general_sum_mg(2, 2, 2, (2, 2), seed=1)
        sets = PurePolicyProfileSet.all_deterministic(env)
        pi = _random_mixed(env, sets, 2)
        only = sets.policies[0][5:6]
        table, _ = best_response_gs(env, pi, 0, only)
        assert np.array_equal(table, only[0])

    @pytest.mark.parametrize("seed", range(6))
    def test_brute_force(self, seed):
        env = random_general_sum_mg(2, 2, 2, (2, 2), seed=seed)
        sets = PurePolicyProfileSet.all_deterministic(env)
        pi = _random_mixed(env, sets, seed + 50)
        for i in range(2):
            other = 1 - i
            q = pi.probs.sum(axis=i)
            best = -np.inf
            for mine in sets.policies[i]:
                v = 0.0
                for k, w in enumerate(q):
                    per = [None, None]
                    per[i], per[other] = mine, sets.policies[other][k]
                    v += w * gs_path_value(env.kernel, env.reward[i], 0, np.ravel_multi_index(tuple(per), env.action_counts))
                best = max(best, v)
            assert best_response_gs(env, pi, i)[1] == pytest.approx(best, abs=1e-12)
            assert best >= evaluate_values_gs(env, pi)[i] - 1e-12

    def test_point_opponent_uses_dp(self):
        env = random_general_sum_mg(3, 2, 2, (2, 2, 2), seed=4)
        sets = PurePolicyProfileSet.all_deterministic(env)
        pi = MixedJointPolicy.point(sets, (0, 1, 2))
        table, v = best_response_gs(env, pi, 1)
        brute = max(best_response_gs(env, pi, 1, sets.policies[1][k : k + 1])[1] for k in range(sets.counts[1]))
        assert v == pytest.approx(brute, abs=1e-12)


class TestMeanEnvAndInformation:
    def test_zero_lambda(self):
        b, _ = general_sum_random(0)
        assert np.array_equal(build_mean_env_gs(b, 0.0).reward, b.template.reward)

    def test_point_mass(self):
        b, _ = general_sum_random(0)
        one = FiniteSupportBelief.uniform([b.candidates[0]])
        assert np.array_equal(build_mean_env_gs(one, 5.0).reward, one.template.reward)

    def test_same_bonus_for_every_player(self):
        b, _ = general_sum_random(1, N=3)
        env = build_mean_env_gs(b, 2.0)
        bonus = env.reward - b.template.reward
        assert np.allclose(bonus[0], bonus[1]) and np.allclose(bonus[0], bonus[2])

    def test_negative_lambda(self):
        with pytest.raises(InvalidArgument):
            build_mean_env_gs(general_sum_random(0)[0], -0.1)

    @pytest.mark.parametrize("seed", range(6))
    def test_regularized_value_identity(self, seed):
        b, _ = general_sum_random(seed)
        lam = 1.5 + seed
        env0 = b.template
        sets = PurePolicyProfileSet.all_deterministic(env0)
        pi = _random_mixed(env0, sets, seed, "product" if seed % 2 else "joint")
        expected = np.zeros(2)
        mi = 0.0
        for prof in itertools.product(*(range(n) for n in sets.counts)):
            p = pi.probs[prof]
            table = sets.profile_table(env0, prof)
            for c, w in zip(b.candidates, b.weights):
                expected += p * w * np.array([gs_path_value(c.kernel, c.reward[i], 0, table) for i in range(2)])
            kernels = []
            for c in b.candidates:
                k, mu, nu = joint_table_as_pair(c.kernel, table)
                kernels.append(k)
            mi += p * exact_episode_mi(kernels, b.weights, 0, mu, nu)
        assert mutual_info_gs(b, pi) == pytest.approx(mi, abs=1e-10)
        assert np.allclose(evaluate_values_gs(build_mean_env_gs(b, lam), pi), expected + lam * mi, atol=1e-8)
        assert np.allclose(expected_values_gs(b, pi), expected, atol=1e-12)


class TestRegMaidsGS:
    def test_single_profile(self):
        b, _ = general_sum_random(0)
        sets = PurePolicyProfileSet(tuple(p[:1] for p in PurePolicyProfileSet.all_deterministic(b.template).policies))
        pi = reg_maids_gs_select(b, 1.0, sets)
        assert pi.probs.shape == (1, 1) and pi.probs.item() == 1.0
        assert np.allclose(equilibrium_gap(b.template, pi), 0.0)

    def test_zero_sum_cross_check(self):
        zs = random_zero_sum_mg(2, 2, 2, 2, seed=6)
        env = zero_sum_embedding(zs)
        b = FiniteSupportBelief.uniform([env])
        sets = PurePolicyProfileSet.all_deterministic(env)
        value = solve_nash(zs)[2].at_start(zs)
        for target in ("cce", "ne"):
            pi = reg_maids_gs_select(b, 0.0, sets, target)
            assert evaluate_values_gs(env, pi)[0] == pytest.approx(value, abs=1e-6)

    @pytest.mark.parametrize("seed", range(5))
    def test_self_consistent_equilibrium(self, seed):
        b, _ = general_sum_random(seed)
        sets = PurePolicyProfileSet.all_deterministic(b.template)
        lam = 3.0
        mean_env = build_mean_env_gs(b, lam)
        cce = reg_maids_gs_select(b, lam, sets, "cce")
        assert cce.kind.value == "joint" and equilibrium_gap(mean_env, cce).max() <= 1e-6
        ne = reg_maids_gs_select(b, lam, sets, "ne")
        if ne.kind.value == "product":
            assert equilibrium_gap(mean_env, ne).max() <= 1e-6

    def test_unknown_target(self):
        b, _ = general_sum_random(0)
        with pytest.raises(InvalidArgument):
            reg_maids_gs_select(b, 0.0, PurePolicyProfileSet.all_deterministic(b.template), "ce")

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31))
    def test_product_gaps_nonnegative(self, seed):
        env = random_general_sum_mg(2, 2, 2, (2, 2), seed=seed % 10_000)
        sets = PurePolicyProfileSet.all_deterministic(env)
        pi = _random_mixed(env, sets, seed, "product")
        assert equilibrium_gap(env, pi).min() >= -1e-9

    def test_joint_gap_is_signed(self):
        # coordination game: correlated play on the diagonal beats every fixed deviation
        U = np.array([[1.0, 0.0], [0.0, 1.0]]).reshape(1, 1, 4)
        env = TabularGeneralSumMG(np.ones((1, 1, 4, 1)), np.stack([U, U]), (2, 2))
        sets = PurePolicyProfileSet.all_deterministic(env)
        pi = MixedJointPolicy.joint(sets, np.array([[0.5, 0.0], [0.0, 0.5]]))
        assert np.allclose(equilibrium_gap(env, pi), -0.5)

    def test_unrestricted_gap_dominates_grid_gap(self):
        env = random_general_sum_mg(2, 2, 2, (2, 2), seed=3)
        sets = PurePolicyProfileSet.all_deterministic(env)
        pi = _random_mixed(env, sets, 3)
        small = PurePolicyProfileSet(tuple(p[:4] for p in sets.policies))
        sub = _random_mixed(env, small, 9)
        assert np.all(equilibrium_gap(env, sub, sets) >= equilibrium_gap(env, sub) - 1e-12)
        assert np.allclose(equilibrium_gap(env, pi, sets), equilibrium_gap(env, pi), atol=1e-12)
