"""Numerical property checks shared by the test suite and the ``invariants`` CLI command.

Every check draws a random instance from a seed and returns ``(value, tol)``; it
passes when ``value <= tol``. Library functions are looked up through their
modules at call time so that a patched implementation is what gets checked.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import linprog
from scipy.stats import norm

from . import ambiguity, core_mdp, drpmd, inner_solvers, monte_carlo, param_transitions
from .environments import garnet

FD_REL_TOL = 1e-5
SCORE_REL_TOL = 1e-6
IDENTITY_TOL = 1e-9
Z_ALPHA = 1e-3


@dataclass(frozen=True)
class CheckRecord:
    check: str
    module: str
    seed: int
    value: float
    tol: float
    passed: bool


def fd_step(x: float) -> float:
    return 1e-6 * (1.0 + abs(x))


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))


def fd_gradient(f: Callable[[np.ndarray], float], x: np.ndarray) -> np.ndarray:
    """Central differences of a scalar function in every coordinate."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        h = fd_step(float(x[i]))
        up, dn = x.copy(), x.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (f(up) - f(dn)) / (2 * h)
    return g


def fd_directional(f: Callable[[np.ndarray], float], x: np.ndarray, direction: np.ndarray) -> float:
    """Richardson-extrapolated central difference; the step is sized to the direction, not to x."""
    h = 1e-3 / max(float(np.max(np.abs(direction))), 1e-300)
    central = lambda s: (f(x + s * direction) - f(x - s * direction)) / (2 * s)
    return (4 * central(h / 2) - central(h)) / 3


def tangent_directions(rng: np.random.Generator, shape: tuple[int, ...], n: int) -> list[np.ndarray]:
    """Random perturbations whose last-axis sums vanish (tangent to a product of simplices)."""
    out = []
    for _ in range(n):
        u = rng.standard_normal(shape)
        out.append(u - u.mean(axis=-1, keepdims=True))
    return out


def _instance(seed: int, S: int = 4, A: int = 3, gamma: float = 0.9) -> tuple[np.random.Generator, core_mdp.TabularMdp]:
    rng = np.random.default_rng(seed)
    return rng, core_mdp.random_mdp(rng, S, A, gamma=gamma, cost_max=5.0)


def _interior_kernel(rng: np.random.Generator, amb) -> np.ndarray:
    """A random kernel strictly inside the ambiguity set (half-way towards a random row)."""
    S, A, _ = amb.shape
    target = rng.dirichlet(np.ones(S), size=(S, A))
    for lam in (0.5, 0.25, 0.1, 0.0):
        p = (1 - lam) * amb.nominal + lam * target
        if amb.contains(p):
            return p
    return np.array(amb.nominal, dtype=float)


# ---------------------------------------------------------------------------
# core_mdp

def check_policy_perf_diff(seed: int) -> tuple[float, float]:
    rng, mdp = _instance(seed)
    pi1, pi2 = (core_mdp.random_policy(rng, 4, 3) for _ in range(2))
    r1, r2 = core_mdp.perf_diff_check(mdp, pi1, pi2, mdp.kernel)
    return max(r1, r2), IDENTITY_TOL * mdp.cost_scale


def check_value_q_identity(seed: int) -> tuple[float, float]:
    rng, mdp = _instance(seed)
    pi = core_mdp.random_policy(rng, 4, 3)
    v = core_mdp.policy_evaluate(mdp, pi, mdp.kernel)
    q = core_mdp.q_values(mdp, pi, mdp.kernel)
    return float(np.max(np.abs(v - (pi * q).sum(axis=1)))), 1e-10 * max(1.0, mdp.cost_scale)


def check_occupancy_floor(seed: int) -> tuple[float, float]:
    rng, mdp = _instance(seed)
    pi = core_mdp.random_policy(rng, 4, 3)
    d = core_mdp.occupancy(mdp, pi, mdp.kernel)
    shortfall = float(np.max((1 - mdp.gamma) * mdp.rho - d))
    return max(shortfall, abs(d.sum() - 1.0)), 1e-10


def check_grad_direct(seed: int) -> tuple[float, float]:
    rng, mdp = _instance(seed)
    pi = core_mdp.random_policy(rng, 4, 3)
    g = core_mdp.grad_direct(mdp, pi, mdp.kernel)
    f = lambda x: core_mdp.objective(mdp, x, mdp.kernel)
    errs = []
    for u in tangent_directions(rng, pi.shape, 5):
        u = u * 0.5 * pi.min() / np.abs(u).max()
        errs.append(abs(fd_directional(f, pi, u) - float(np.sum(g * u))) / max(abs(float(np.sum(g * u))), 1e-12))
    return max(errs), FD_REL_TOL


def check_grad_softmax(seed: int) -> tuple[float, float]:
    rng, mdp = _instance(seed)
    theta = rng.standard_normal((4, 3))
    g = core_mdp.grad_softmax(mdp, theta, mdp.kernel)
    fd = fd_gradient(lambda x: core_mdp.objective(mdp, core_mdp.softmax_policy(x), mdp.kernel), theta)
    return rel_error(g, fd), FD_REL_TOL


# ---------------------------------------------------------------------------
# ambiguity

def _random_set(rng: np.random.Generator, rect: str, S: int = 5, A: int = 3):
    kernel = rng.dirichlet(np.ones(S), size=(S, A))
    if rect == "sa":
        return ambiguity.SaRectL1Set(kernel, rng.uniform(0.1, 1.0, (S, A)))
    return ambiguity.SRectL1Set(kernel, rng.uniform(0.2, 2.0, S))


def check_prox_variational(seed: int, rect: str) -> tuple[float, float]:
    """Projection y of x satisfies (x - y).(z - y) <= 0 for feasible z, and y is feasible."""
    rng = np.random.default_rng(seed)
    amb = _random_set(rng, rect)
    base = _interior_kernel(rng, amb)
    g = rng.standard_normal(amb.shape)
    y = amb.prox(base, g, 0.7)
    x = base + 0.7 * g
    worst = 0.0 if amb.contains(y) else np.inf
    for _ in range(50):
        z = _interior_kernel(rng, amb)
        worst = max(worst, float(np.sum((x - y) * (z - y))))
    # the nominal kernel and vertex-pushed kernels are feasible too
    worst = max(worst, float(np.sum((x - y) * (amb.nominal - y))))
    z = amb.linmax(rng.standard_normal(amb.shape), core_mdp.random_policy(rng, amb.shape[0], amb.shape[1]))
    worst = max(worst, float(np.sum((x - y) * (z - y))))
    return worst, 1e-8


def _lp_rowmax(c: np.ndarray, z: np.ndarray, kappa: float) -> float:
    """max p.z over {p in simplex, ||p - c||_1 <= kappa} via the split p = c + u - w."""
    n = c.size
    cost = -np.concatenate([z, -z])
    A_ub = np.concatenate([np.ones(n), np.ones(n)])[None, :]
    A_eq = np.concatenate([np.ones(n), -np.ones(n)])[None, :]
    bounds = [(0, None)] * n + [(0, ci) for ci in c]
    res = linprog(cost, A_ub=A_ub, b_ub=[kappa], A_eq=A_eq, b_eq=[0.0], bounds=bounds, method="highs")
    return float(c @ z - res.fun)


def check_linmax_lp(seed: int) -> tuple[float, float]:
    rng = np.random.default_rng(seed)
    amb = _random_set(rng, "sa", S=6, A=1)
    z = rng.standard_normal(amb.shape)
    p = amb.linmax(z)
    errs = [abs(float(p[s, 0] @ z[s, 0]) - _lp_rowmax(amb.nominal[s, 0], z[s, 0], amb.kappa[s, 0]))
            for s in range(6)]
    return max(errs), 1e-8


# ---------------------------------------------------------------------------
# inner_solvers

def check_kernel_perf_diff(seed: int, rect: str = "sa") -> tuple[float, float]:
    rng, mdp = _instance(seed)
    pi = core_mdp.random_policy(rng, 4, 3)
    p1 = rng.dirichlet(np.ones(4), size=(4, 3))
    r1, r2 = inner_solvers.kernel_perf_diff_check(mdp, pi, p1, mdp.kernel)
    return max(r1, r2), IDENTITY_TOL * mdp.cost_scale


def check_contraction(seed: int, rect: str) -> tuple[float, float]:
    rng = np.random.default_rng(seed)
    mdp, sa, s = garnet.garnet_generate(garnet.GarnetSpec(5, 3, 3, seed))
    amb = sa if rect == "sa" else s
    pi = core_mdp.random_policy(rng, 5, 3)
    v, w = rng.uniform(0, 100, 5), rng.uniform(0, 100, 5)
    tv, _ = inner_solvers.robust_bellman_policy_step(mdp, pi, v, amb)
    tw, _ = inner_solvers.robust_bellman_policy_step(mdp, pi, w, amb)
    return float(np.max(np.abs(tv - tw)) / np.max(np.abs(v - w))), mdp.gamma + 1e-12


def check_transition_grad(seed: int) -> tuple[float, float]:
    rng, mdp = _instance(seed)
    pi = core_mdp.random_policy(rng, 4, 3)
    g = inner_solvers.transition_grad(mdp, pi, mdp.kernel)
    f = lambda p: core_mdp.objective(mdp, pi, p)
    errs = []
    for u in tangent_directions(rng, mdp.kernel.shape, 5):
        exact = float(np.sum(g * u))
        errs.append(abs(fd_directional(f, mdp.kernel, u) - exact) / max(abs(exact), 1e-12))
    return max(errs), FD_REL_TOL


def check_tma_monotone(seed: int, rect: str) -> tuple[float, float]:
    rng = np.random.default_rng(seed)
    mdp, sa, s = garnet.garnet_generate(garnet.GarnetSpec(5, 3, 3, seed))
    amb = sa if rect == "sa" else s
    pi = core_mdp.random_policy(rng, 5, 3)
    p = np.array(amb.nominal)
    J = core_mdp.objective(mdp, pi, p)
    worst_drop = 0.0
    for _ in range(20):
        p = inner_solvers.tma_step(mdp, pi, p, amb, 0.5)
        J_next = core_mdp.objective(mdp, pi, p)
        worst_drop = max(worst_drop, J - J_next)
        J = J_next
    return worst_drop, 1e-10 * mdp.cost_scale


# ---------------------------------------------------------------------------
# drpmd

def check_three_point(seed: int) -> tuple[float, float]:
    """SE mirror step pi' = proj(pi - a q) satisfies a<q, pi' - y> <= D(y, pi) - D(y, pi') - D(pi', pi)."""
    rng = np.random.default_rng(seed)
    pi = core_mdp.random_policy(rng, 4, 3)
    q = rng.uniform(0, 50, (4, 3))
    alpha = 0.05
    new = drpmd.pmd_update_direct(pi, q, alpha, "se")
    worst = -np.inf
    for _ in range(100):
        y = core_mdp.random_policy(rng, 4, 3)
        lhs = alpha * np.sum(q * (new - y), axis=1)
        rhs = 0.5 * (np.sum((y - pi) ** 2, axis=1) - np.sum((y - new) ** 2, axis=1) - np.sum((new - pi) ** 2, axis=1))
        worst = max(worst, float(np.max(lhs - rhs)))
    return worst, 1e-9


# ---------------------------------------------------------------------------
# param_transitions

def _entropy_model(rng: np.random.Generator, S: int = 3, A: int = 2, l: int = 2, n: int = 2):
    nominal = rng.dirichlet(np.ones(S), size=(S, A))
    return param_transitions.EntropyTransition(
        nominal, rng.standard_normal((S, l)), rng.uniform(0.5, 1.5, (S, A, n)),
        rng.standard_normal(l), rng.uniform(0.5, 1.5, n))


def check_entropy_score(seed: int) -> tuple[float, float]:
    rng = np.random.default_rng(seed)
    tr = _entropy_model(rng)
    s, a, t = (int(x) for x in rng.integers(0, [3, 2, 3]))
    fd = fd_gradient(lambda xi: float(np.log(tr.with_params(xi).eval(s, a)[t])), tr.params)
    return rel_error(param_transitions.entropy_score(tr, s, a, t), fd), SCORE_REL_TOL


def check_gm_score(seed: int) -> tuple[float, float]:
    rng = np.random.default_rng(seed)
    M, n = 2, 2
    gm = param_transitions.GaussianMixtureTransition(rng.dirichlet(np.ones(M)), rng.standard_normal((M, n)),
                                                     rng.uniform(0.5, 2.0, M))
    zeta = rng.uniform(0.2, 1.0, n)
    x = float(gm.means(zeta[None])[0] @ gm.weights + rng.standard_normal())
    _, score = param_transitions.gm_logdensity(gm, zeta, x)
    fd = fd_gradient(lambda xi: param_transitions.gm_logdensity(gm.with_params(xi), zeta, x)[0], gm.params)
    return rel_error(score, fd), SCORE_REL_TOL


def check_score_identity(seed: int) -> tuple[float, float]:
    rng = np.random.default_rng(seed)
    tr = _entropy_model(rng)
    mean = np.einsum("sat,satk->sak", tr.kernel(), tr.scores())
    return float(np.max(np.abs(mean))), 1e-10


def check_transition_grad_parametric(seed: int) -> tuple[float, float]:
    rng = np.random.default_rng(seed)
    tr = _entropy_model(rng)
    mdp = core_mdp.random_mdp(rng, 3, 2, gamma=0.9, cost_max=5.0).with_kernel(tr.kernel())
    pi = core_mdp.random_policy(rng, 3, 2)
    g = param_transitions.transition_grad_parametric(mdp, pi, tr)
    fd = fd_gradient(lambda xi: core_mdp.objective(mdp, pi, tr.with_params(xi).kernel()), tr.params)
    return rel_error(g, fd), FD_REL_TOL


# ---------------------------------------------------------------------------
# monte_carlo

def z_critical(alpha: float = Z_ALPHA) -> float:
    return float(norm.ppf(1.0 - alpha / 2.0))


def max_abs_z(estimate: monte_carlo.GradientEstimate, exact: np.ndarray) -> float:
    se = np.maximum(estimate.stderr, 1e-300)
    return float(np.max(np.abs(estimate.mean - np.asarray(exact).reshape(-1)) / se))


def tiny_mc_problem(seed: int):
    """3-state entropy-kernel MDP with gamma 0.5, a random softmax policy and its exact gradients."""
    rng = np.random.default_rng(seed)
    tr = _entropy_model(rng, S=3, A=2, l=1, n=1)
    mdp = core_mdp.random_mdp(rng, 3, 2, gamma=0.5, cost_max=1.0).with_kernel(tr.kernel())
    pi = core_mdp.random_policy(rng, 3, 2)
    env = monte_carlo.TabularEnv(mdp, tr)
    exact_xi = param_transitions.transition_grad_parametric(mdp, pi, tr)
    exact_theta = core_mdp.grad_softmax(mdp, np.log(pi), tr.kernel())
    return env, tr, pi, exact_xi, exact_theta


def check_mc_estimators(seed: int, n_traj: int = 20_000, horizon: int = 40) -> tuple[float, float]:
    env, tr, pi, exact_xi, exact_theta = tiny_mc_problem(seed)
    batch = monte_carlo.sample_batch(env, monte_carlo.tabular_theta(pi), tr.params, n_traj, horizon,
                                     np.random.default_rng(seed + 1), keep_policy_grads=True)
    z_xi = max_abs_z(monte_carlo.mc_transition_grad_estimate(batch, env, tr.params), exact_xi)
    z_th = max_abs_z(monte_carlo.reinforce_estimate(batch, env.gamma), exact_theta)
    return max(z_xi, z_th), z_critical()


# ---------------------------------------------------------------------------
# registry

def _bind(fn, **kw):
    return lambda seed: fn(seed, **kw)


CHECKS: dict[str, tuple[str, Callable[[int], tuple[float, float]]]] = {
    "policy_perf_diff": ("core_mdp", check_policy_perf_diff),
    "value_q_identity": ("core_mdp", check_value_q_identity),
    "occupancy_floor": ("core_mdp", check_occupancy_floor),
    "grad_direct_fd": ("core_mdp", check_grad_direct),
    "grad_softmax_fd": ("core_mdp", check_grad_softmax),
    "prox_variational_sa": ("ambiguity", _bind(check_prox_variational, rect="sa")),
    "prox_variational_s": ("ambiguity", _bind(check_prox_variational, rect="s")),
    "linmax_lp": ("ambiguity", check_linmax_lp),
    "kernel_perf_diff": ("inner_solvers", check_kernel_perf_diff),
    "contraction_sa": ("inner_solvers", _bind(check_contraction, rect="sa")),
    "contraction_s": ("inner_solvers", _bind(check_contraction, rect="s")),
    "transition_grad_fd": ("inner_solvers", check_transition_grad),
    "tma_monotone_sa": ("inner_solvers", _bind(check_tma_monotone, rect="sa")),
    "tma_monotone_s": ("inner_solvers", _bind(check_tma_monotone, rect="s")),
    "three_point": ("drpmd", check_three_point),
    "entropy_score_fd": ("param_transitions", check_entropy_score),
    "gm_score_fd": ("param_transitions", check_gm_score),
    "score_identity": ("param_transitions", check_score_identity),
    "transition_grad_parametric_fd": ("param_transitions", check_transition_grad_parametric),
    "mc_estimators_z": ("monte_carlo", check_mc_estimators),
}


def run_checks(seeds: list[int], names: list[str] | None = None) -> list[CheckRecord]:
    """Run the named checks (all by default) on every seed; exceptions count as failures."""
    out = []
    for name in names or list(CHECKS):
        module, fn = CHECKS[name]
        for seed in seeds:
            try:
                value, tol = fn(seed)
                passed = bool(np.isfinite(value) and value <= tol)
            except Exception:  # noqa: BLE001 - any crash is a failed invariant
                value, tol, passed = float("nan"), float("nan"), False
            out.append(CheckRecord(name, module, seed, float(value), float(tol), passed))
    return out
