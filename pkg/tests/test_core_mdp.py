import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rmdp_kit import core_mdp
from rmdp_kit.core_mdp import (TabularMdp, advantage, grad_direct, grad_softmax, objective, occupancy,
                               perf_diff_check, policy_evaluate, q_values, random_mdp, random_policy,
                               softmax_policy, uniform_policy)
from rmdp_kit.invariants import fd_gradient, rel_error, tangent_directions

from oracles import bellman_iterate, occupancy_series


def single_state(cost: float, gamma: float) -> TabularMdp:
    return TabularMdp(cost=np.full((1, 1, 1), cost), kernel=np.ones((1, 1, 1)), rho=np.ones(1), gamma=gamma)


class TestValidation:
    def test_rejects_gamma_one(self):
        with pytest.raises(ValueError, match="gamma"):
            single_state(1.0, 1.0)

    def test_rejects_bad_rows(self):
        with pytest.raises(ValueError):
            TabularMdp(cost=np.zeros((2, 1, 2)), kernel=np.array([[[0.5, 0.4]], [[1.0, 0.0]]]),
                       rho=np.array([0.5, 0.5]), gamma=0.9)

    def test_rejects_nonfinite_cost(self):
        with pytest.raises(ValueError, match="finite"):
            TabularMdp(cost=np.full((1, 1, 1), np.nan), kernel=np.ones((1, 1, 1)), rho=np.ones(1), gamma=0.5)

    def test_shape_mismatch(self, mdp7):
        with pytest.raises(ValueError):
            policy_evaluate(mdp7, np.full((3, 3), 1 / 3), mdp7.kernel)

    def test_cost_scale(self, mdp7):
        assert mdp7.cost_scale == pytest.approx(np.abs(mdp7.cost).max())

    def test_json_roundtrip(self, mdp7):
        back = TabularMdp.from_json(mdp7.to_json())
        np.testing.assert_array_equal(back.kernel, mdp7.kernel)
        np.testing.assert_array_equal(back.cost, mdp7.cost)
        assert json.loads(back.to_json()) == json.loads(mdp7.to_json())


class TestPolicyEvaluate:
    def test_zero_cost(self):
        assert policy_evaluate(single_state(0.0, 0.5), np.ones((1, 1)), np.ones((1, 1, 1)))[0] == 0.0

    def test_geometric_sum(self):
        assert policy_evaluate(single_state(1.0, 0.5), np.ones((1, 1)), np.ones((1, 1, 1)))[0] == pytest.approx(2.0)

    def test_matches_bellman_iteration(self, mdp7):
        pi = random_policy(np.random.default_rng(1), 4, 3)
        np.testing.assert_allclose(policy_evaluate(mdp7, pi, mdp7.kernel), bellman_iterate(mdp7, pi, mdp7.kernel),
                                   atol=1e-8)

    def test_linear_residual(self, mdp7):
        pi = random_policy(np.random.default_rng(2), 4, 3)
        v = policy_evaluate(mdp7, pi, mdp7.kernel)
        P = np.einsum("sa,sat->st", pi, mdp7.kernel)
        c = np.einsum("sa,sat,sat->s", pi, mdp7.kernel, mdp7.cost)
        assert np.max(np.abs(v - mdp7.gamma * P @ v - c)) <= 1e-9 * mdp7.cost_scale

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), gamma=st.floats(0.1, 0.99))
    def test_value_bounds(self, seed, gamma):
        rng = np.random.default_rng(seed)
        mdp = random_mdp(rng, 3, 2, gamma=gamma, cost_max=5.0)
        v = policy_evaluate(mdp, random_policy(rng, 3, 2), mdp.kernel)
        assert np.all(v >= -1e-9) and np.all(v <= mdp.cost_scale / (1 - gamma) + 1e-9)


class TestQValues:
    def test_zero_cost_chain(self):
        mdp = TabularMdp(cost=np.zeros((3, 1, 3)), kernel=np.eye(3)[[1, 2, 2]][:, None, :], rho=np.ones(3) / 3,
                         gamma=0.9)
        np.testing.assert_array_equal(q_values(mdp, np.ones((3, 1)), mdp.kernel), 0.0)

    def test_one_state_closed_form(self, one_state_two_actions):
        mdp = one_state_two_actions
        q = q_values(mdp, uniform_policy(1, 2), mdp.kernel)
        np.testing.assert_allclose(q, [[4.5, 5.5]], rtol=1e-12)

    def test_value_identity(self, mdp7):
        pi = random_policy(np.random.default_rng(3), 4, 3)
        v = policy_evaluate(mdp7, pi, mdp7.kernel)
        q = q_values(mdp7, pi, mdp7.kernel)
        assert np.max(np.abs(v - (pi * q).sum(axis=1))) <= 1e-10
        np.testing.assert_allclose(advantage(mdp7, pi, mdp7.kernel), q - v[:, None], atol=1e-12)


class TestOccupancy:
    def test_single_state(self):
        np.testing.assert_allclose(occupancy(single_state(1.0, 0.7), np.ones((1, 1)), np.ones((1, 1, 1))), [1.0])

    def test_absorbing_chain(self):
        kernel = np.array([[[0.0, 1.0]], [[0.0, 1.0]]])
        mdp = TabularMdp(cost=np.zeros((2, 1, 2)), kernel=kernel, rho=np.array([1.0, 0.0]), gamma=0.5)
        np.testing.assert_allclose(occupancy(mdp, np.ones((2, 1)), kernel), [0.5, 0.5], atol=1e-12)

    def test_matches_series(self, mdp7):
        pi = random_policy(np.random.default_rng(4), 4, 3)
        np.testing.assert_allclose(occupancy(mdp7, pi, mdp7.kernel), occupancy_series(mdp7, pi, mdp7.kernel),
                                   atol=1e-8)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_floor_and_mass(self, seed):
        rng = np.random.default_rng(seed)
        mdp = random_mdp(rng, 5, 2, gamma=0.95)
        d = occupancy(mdp, random_policy(rng, 5, 2), mdp.kernel)
        assert abs(d.sum() - 1) <= 1e-10
        assert np.all(d >= (1 - mdp.gamma) * mdp.rho - 1e-12)


class TestObjective:
    def test_zero_cost(self):
        assert objective(single_state(0.0, 0.95), np.ones((1, 1)), np.ones((1, 1, 1))) == 0.0

    def test_one_state(self):
        assert objective(single_state(1.0, 0.95), np.ones((1, 1)), np.ones((1, 1, 1))) == pytest.approx(20.0)

    def test_occupancy_weighted_identity(self, mdp7):
        pi = random_policy(np.random.default_rng(5), 4, 3)
        d = occupancy(mdp7, pi, mdp7.kernel)
        c = np.einsum("sa,sat,sat->s", pi, mdp7.kernel, mdp7.cost)
        assert objective(mdp7, pi, mdp7.kernel) == pytest.approx(d @ c / (1 - mdp7.gamma), abs=1e-10)

    def test_monte_carlo_rollouts(self, mdp7):
        rng = np.random.default_rng(6)
        pi = random_policy(rng, 4, 3)
        n, horizon = 50_000, 200
        s = rng.choice(4, size=n, p=mdp7.rho)
        total = np.zeros(n)
        for t in range(horizon):
            a = (rng.random(n)[:, None] > np.cumsum(pi[s], axis=1)).sum(axis=1).clip(max=2)
            nxt = (rng.random(n)[:, None] > np.cumsum(mdp7.kernel[s, a], axis=1)).sum(axis=1).clip(max=3)
            total += mdp7.gamma ** t * mdp7.cost[s, a, nxt]
            s = nxt
        se = total.std(ddof=1) / np.sqrt(n)
        assert abs(total.mean() - objective(mdp7, pi, mdp7.kernel)) <= 3 * se


class TestGradDirect:
    def test_zero_cost(self):
        mdp = TabularMdp(cost=np.zeros((2, 2, 2)), kernel=np.full((2, 2, 2), 0.5), rho=np.ones(2) / 2, gamma=0.9)
        np.testing.assert_array_equal(grad_direct(mdp, uniform_policy(2, 2), mdp.kernel), 0.0)

    def test_one_state_closed_form(self, one_state_two_actions):
        mdp = one_state_two_actions
        np.testing.assert_allclose(grad_direct(mdp, uniform_policy(1, 2), mdp.kernel), [[45.0, 55.0]], rtol=1e-12)

    def test_finite_differences(self, mdp7):
        rng = np.random.default_rng(7)
        pi = random_policy(rng, 4, 3)
        g = grad_direct(mdp7, pi, mdp7.kernel)
        for u in tangent_directions(rng, pi.shape, 5):
            u *= 0.5 * pi.min() / np.abs(u).max()
            h = 1e-6
            fd = (objective(mdp7, pi + h * u, mdp7.kernel) - objective(mdp7, pi - h * u, mdp7.kernel)) / (2 * h)
            assert fd == pytest.approx(np.sum(g * u), rel=1e-5)


class TestGradSoftmax:
    def test_symmetric_costs_give_zero(self):
        cost = np.ones((2, 2, 2))
        mdp = TabularMdp(cost=cost, kernel=np.full((2, 2, 2), 0.5), rho=np.ones(2) / 2, gamma=0.9)
        np.testing.assert_allclose(grad_softmax(mdp, np.zeros((2, 2)), mdp.kernel), 0.0, atol=1e-12)

    def test_finite_differences(self, mdp7):
        theta = np.random.default_rng(8).standard_normal((4, 3))
        fd = fd_gradient(lambda x: objective(mdp7, softmax_policy(x), mdp7.kernel), theta)
        assert rel_error(grad_softmax(mdp7, theta, mdp7.kernel), fd) <= 1e-5

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_rows_sum_to_zero(self, seed):
        rng = np.random.default_rng(seed)
        mdp = random_mdp(rng, 3, 4)
        g = grad_softmax(mdp, 3 * rng.standard_normal((3, 4)), mdp.kernel)
        assert np.max(np.abs(g.sum(axis=1))) <= 1e-10


class TestPerformanceDifference:
    def test_identical_policies(self, mdp7):
        pi = random_policy(np.random.default_rng(9), 4, 3)
        assert perf_diff_check(mdp7, pi, pi, mdp7.kernel) == (pytest.approx(0.0, abs=1e-12),) * 2

    @pytest.mark.parametrize("seed", range(10))
    def test_random_pairs(self, seed):
        rng = np.random.default_rng(seed)
        mdp = random_mdp(rng, 4, 3, cost_max=5.0)
        r1, r2 = perf_diff_check(mdp, random_policy(rng, 4, 3), random_policy(rng, 4, 3), mdp.kernel)
        assert max(r1, r2) <= 1e-9 * mdp.cost_scale

    def test_deterministic_vs_uniform(self, mdp7):
        det = np.eye(3)[[0, 2, 1, 0]]
        assert max(perf_diff_check(mdp7, det, uniform_policy(4, 3), mdp7.kernel)) <= 1e-9


def test_softmax_is_stable_for_large_logits():
    pi = softmax_policy(np.array([[1000.0, 0.0, -1000.0]]))
    assert np.all(np.isfinite(pi)) and pi[0, 0] == pytest.approx(1.0)


def test_module_exports_helpers():
    assert core_mdp.uniform_policy(2, 4).sum() == pytest.approx(2.0)
