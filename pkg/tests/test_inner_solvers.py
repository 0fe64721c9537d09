import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rmdp_kit.ambiguity import SaRectL1Set, SRectL1Set
from rmdp_kit.core_mdp import TabularMdp, objective, policy_evaluate, random_mdp, random_policy
from rmdp_kit.environments.garnet import GarnetSpec, garnet_generate
from rmdp_kit.inner_solvers import (ConstantStep, GeometricStep, InfiniteStep, InnerConfig, bellman_gap,
                                   geometric_ratio, kernel_perf_diff_check, nominal_value_iterate_optimal,
                                   robust_bellman_policy_step, robust_evaluate, robust_objective,
                                   robust_value_iterate_optimal, robust_value_iterate_policy, tma_solve, tma_step,
                                   transition_grad)
from rmdp_kit.invariants import tangent_directions


@pytest.fixture
def garnet0():
    return garnet_generate(GarnetSpec(5, 4, 3, 0))


def zero_radius(mdp, rect):
    S, A = mdp.n_states, mdp.n_actions
    return SaRectL1Set(mdp.kernel, np.zeros((S, A))) if rect == "sa" else SRectL1Set(mdp.kernel, np.zeros(S))


class TestConfig:
    def test_beta_schedules(self):
        assert InnerConfig(ConstantStep(2.0)).beta(7) == 2.0
        assert InnerConfig(GeometricStep(1.0, 2.0)).beta(3) == 8.0
        assert InnerConfig().beta(0) == float("inf")

    def test_rejects_kl_geometry(self):
        with pytest.raises(ValueError):
            InnerConfig(geometry="kl")

    def test_rejects_shrinking_ratio(self):
        with pytest.raises(ValueError):
            InnerConfig(GeometricStep(1.0, 0.5))

    def test_geometric_ratio(self):
        assert geometric_ratio(0.9, 2.0) == pytest.approx(1 / 0.95)


class TestTransitionGrad:
    def test_zero_cost(self):
        mdp = TabularMdp(np.zeros((2, 2, 2)), np.full((2, 2, 2), 0.5), np.ones(2) / 2, 0.9)
        np.testing.assert_array_equal(transition_grad(mdp, np.full((2, 2), 0.5), mdp.kernel), 0.0)

    def test_finite_differences_seed11(self):
        rng = np.random.default_rng(11)
        mdp = random_mdp(rng, 4, 3, cost_max=5.0)
        pi = random_policy(rng, 4, 3)
        g = transition_grad(mdp, pi, mdp.kernel)
        for u in tangent_directions(rng, mdp.kernel.shape, 5):
            h = 1e-6
            fd = (objective(mdp, pi, mdp.kernel + h * u) - objective(mdp, pi, mdp.kernel - h * u)) / (2 * h)
            assert fd == pytest.approx(np.sum(g * u), rel=1e-5)

    def test_zero_probability_action_slice(self, mdp7):
        pi = np.array([[1.0, 0.0, 0.0], [0.2, 0.0, 0.8], [0.5, 0.5, 0.0], [0.0, 0.0, 1.0]])
        g = transition_grad(mdp7, pi, mdp7.kernel)
        assert np.all(g[pi == 0] == 0.0)


class TestKernelPerformanceDifference:
    @pytest.mark.parametrize("seed", range(10))
    def test_random_kernels(self, seed):
        rng = np.random.default_rng(seed)
        mdp = random_mdp(rng, 4, 3, cost_max=5.0)
        p1 = rng.dirichlet(np.ones(4), size=(4, 3))
        assert max(kernel_perf_diff_check(mdp, random_policy(rng, 4, 3), p1, mdp.kernel)) <= 1e-9 * mdp.cost_scale


class TestBellmanStep:
    def test_zero_radius_is_nominal_update(self, mdp7):
        pi = random_policy(np.random.default_rng(0), 4, 3)
        v = np.random.default_rng(1).uniform(0, 5, 4)
        tv, p = robust_bellman_policy_step(mdp7, pi, v, zero_radius(mdp7, "sa"))
        expected = np.einsum("sa,sat,sat->s", pi, mdp7.kernel, mdp7.cost + mdp7.gamma * v)
        np.testing.assert_allclose(tv, expected, atol=1e-12)
        np.testing.assert_array_equal(p, mdp7.kernel)

    def test_zero_cost_zero_value(self):
        mdp = TabularMdp(np.zeros((3, 2, 3)), np.full((3, 2, 3), 1 / 3), np.ones(3) / 3, 0.9)
        amb = SaRectL1Set(mdp.kernel, np.full((3, 2), 0.5))
        tv, _ = robust_bellman_policy_step(mdp, np.full((3, 2), 0.5), np.zeros(3), amb)
        np.testing.assert_array_equal(tv, 0.0)

    @pytest.mark.parametrize("rect", ["sa", "s"])
    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_contraction(self, rect, seed):
        rng = np.random.default_rng(seed)
        mdp, sa, s = garnet_generate(GarnetSpec(5, 3, 3, seed))
        amb = sa if rect == "sa" else s
        pi = random_policy(rng, 5, 3)
        v, w = rng.uniform(0, 100, 5), rng.uniform(0, 100, 5)
        tv, _ = robust_bellman_policy_step(mdp, pi, v, amb)
        tw, _ = robust_bellman_policy_step(mdp, pi, w, amb)
        assert np.max(np.abs(tv - tw)) <= mdp.gamma * np.max(np.abs(v - w)) + 1e-12


class TestTmaStep:
    @pytest.mark.parametrize("rect", ["sa", "s"])
    def test_zero_step_keeps_kernel(self, garnet0, rect):
        mdp, sa, s = garnet0
        amb = sa if rect == "sa" else s
        pi = random_policy(np.random.default_rng(2), 5, 4)
        np.testing.assert_array_equal(tma_step(mdp, pi, amb.nominal, amb, 0.0), amb.nominal)

    @pytest.mark.parametrize("rect", ["sa", "s"])
    def test_infinite_step_is_bellman_update(self, garnet0, rect):
        mdp, sa, s = garnet0
        amb = sa if rect == "sa" else s
        pi = random_policy(np.random.default_rng(3), 5, 4)
        p = tma_step(mdp, pi, amb.nominal, amb, float("inf"))
        _, q = robust_bellman_policy_step(mdp, pi, policy_evaluate(mdp, pi, amb.nominal), amb)
        np.testing.assert_allclose(p, q, atol=1e-9)

    @pytest.mark.parametrize("rect", ["sa", "s"])
    def test_monotone_over_random_steps(self, rect):
        rng = np.random.default_rng(4)
        mdp, sa, s = garnet_generate(GarnetSpec(5, 3, 3, 4))
        amb = sa if rect == "sa" else s
        pi = random_policy(rng, 5, 3)
        p = np.array(amb.nominal)
        J = objective(mdp, pi, p)
        for _ in range(200):
            p = tma_step(mdp, pi, p, amb, rng.uniform(0.01, 2.0))
            assert amb.contains(p)
            J_next = objective(mdp, pi, p)
            assert J_next >= J - 1e-10
            J = J_next


class TestTmaSolve:
    @pytest.mark.parametrize("rect", ["sa", "s"])
    def test_zero_radius_returns_nominal(self, mdp7, rect):
        res = tma_solve(mdp7, random_policy(np.random.default_rng(5), 4, 3), zero_radius(mdp7, rect),
                        InnerConfig(ConstantStep(1.0)))
        assert res.iters == 0 and res.converged
        np.testing.assert_array_equal(res.kernel, mdp7.kernel)

    def test_matches_value_iteration_fixed_point(self, garnet0):
        mdp, sa, _ = garnet0
        pi = random_policy(np.random.default_rng(6), 5, 4)
        res = tma_solve(mdp, pi, sa, InnerConfig(ConstantStep(1.0), residual_tol=1e-6))
        v, _ = robust_value_iterate_policy(mdp, pi, sa, tol=1e-10)
        assert res.converged and abs(res.J - mdp.rho @ v) <= 1e-6 * mdp.cost_scale

    @pytest.mark.parametrize("rect", ["sa", "s"])
    def test_infinite_schedule_residual_decays(self, rect):
        mdp, sa, s = garnet_generate(GarnetSpec(8, 3, 4, 1))
        amb = sa if rect == "sa" else s
        res = tma_solve(mdp, random_policy(np.random.default_rng(7), 8, 3), amb,
                        InnerConfig(InfiniteStep(), residual_tol=1e-13))
        r = np.array([row[2] for row in res.trace])
        for i in range(r.size):
            for j in range(i + 1, min(i + 11, r.size)):
                assert r[j] <= mdp.gamma ** (j - i) * r[i] + 1e-12

    def test_trace_columns(self, garnet0):
        mdp, sa, _ = garnet0
        res = tma_solve(mdp, random_policy(np.random.default_rng(8), 5, 4), sa, InnerConfig(ConstantStep(0.5)))
        t, J, residual, beta = res.trace[-1]
        assert t == res.iters and J == pytest.approx(res.J) and beta == 0.5 and residual <= 1e-6

    def test_non_convergence_flag(self, garnet0):
        mdp, sa, _ = garnet0
        res = tma_solve(mdp, random_policy(np.random.default_rng(9), 5, 4), sa,
                        InnerConfig(ConstantStep(1e-6), max_iters=3, residual_tol=1e-12))
        assert not res.converged and res.iters == 3


class TestRobustValueIteration:
    def test_policy_zero_radius_equals_evaluation(self, mdp7):
        pi = random_policy(np.random.default_rng(10), 4, 3)
        v, _ = robust_value_iterate_policy(mdp7, pi, zero_radius(mdp7, "sa"), tol=1e-11)
        np.testing.assert_allclose(v, policy_evaluate(mdp7, pi, mdp7.kernel), atol=1e-10)

    @pytest.mark.parametrize("rect", ["sa", "s"])
    def test_policy_agrees_with_tma(self, rect):
        mdp, sa, s = garnet_generate(GarnetSpec(6, 3, 3, 2))
        amb = sa if rect == "sa" else s
        pi = random_policy(np.random.default_rng(11), 6, 3)
        tol = 1e-6 * mdp.cost_scale
        v, _ = robust_value_iterate_policy(mdp, pi, amb, tol=tol)
        res = tma_solve(mdp, pi, amb, InnerConfig(InfiniteStep(), residual_tol=tol))
        assert abs(mdp.rho @ v - res.J) <= 2 * tol

    def test_evaluate_and_gap(self, garnet0):
        mdp, sa, _ = garnet0
        pi = random_policy(np.random.default_rng(12), 5, 4)
        v, p = robust_evaluate(mdp, pi, sa)
        assert sa.contains(p)
        gap, _ = bellman_gap(mdp, pi, p, sa, v)
        assert gap <= 1e-10 * mdp.cost_scale
        assert robust_objective(mdp, pi, sa) == pytest.approx(mdp.rho @ v)

    def test_optimal_zero_radius_is_classical(self, mdp7):
        v, _, _, ok = robust_value_iterate_optimal(mdp7, zero_radius(mdp7, "sa"), tol=1e-10)
        v_nom, _ = nominal_value_iterate_optimal(mdp7)
        assert ok
        np.testing.assert_allclose(v, v_nom, atol=1e-9)

    @pytest.mark.parametrize("rect", ["sa", "s"])
    def test_two_state_hand_instance(self, rect):
        # costs depend only on (s, a); with the full radius the adversary sends every row to the
        # costlier state, so v_s = min_a c[s,a] + gamma M with M = max_s min_a c[s,a] / (1 - gamma)
        c = np.array([[1.0, 2.0], [3.0, 0.5]])
        cost = np.repeat(c[:, :, None], 2, axis=2)
        kernel = np.full((2, 2, 2), 0.5)
        mdp = TabularMdp(cost, kernel, np.array([0.5, 0.5]), 0.9)
        amb = SaRectL1Set(kernel, np.full((2, 2), 2.0)) if rect == "sa" else SRectL1Set(kernel, np.full(2, 4.0))
        v, pi, p, ok = robust_value_iterate_optimal(mdp, amb, tol=1e-12)
        assert ok
        np.testing.assert_allclose(v, [10.0, 9.5], atol=1e-9)
        np.testing.assert_array_equal(pi, [[1.0, 0.0], [0.0, 1.0]])
        np.testing.assert_allclose(p[np.arange(2), pi.argmax(axis=1)], [[1.0, 0.0], [1.0, 0.0]], atol=1e-12)

    @pytest.mark.parametrize("rect", ["sa", "s"])
    def test_optimal_beats_random_policies(self, garnet0, rect):
        mdp, sa, s = garnet0
        amb = sa if rect == "sa" else s
        tol = 1e-8
        v, pi_star, _, ok = robust_value_iterate_optimal(mdp, amb, tol=tol)
        phi_star = robust_objective(mdp, pi_star, amb)
        assert ok and phi_star == pytest.approx(mdp.rho @ v, abs=tol)
        rng = np.random.default_rng(13)
        for _ in range(50):
            assert phi_star <= robust_objective(mdp, random_policy(rng, 5, 4), amb) + tol
