"""Single-product inventory control with Gaussian-mixture demand and lost sales.

The stock level x lives in [0, level_max]. Each period the agent orders one of
``orders`` units, demand D is drawn from a Gaussian mixture whose component means
are eta_m . zeta(x, q), and the level moves to clamp(x + q - D, 0, level_max).
Unmet demand is lost and charged per unit, so the stage cost is
``order_cost q + holding_cost x' + shortage_cost (D - x - q)_+``.

A discretized surrogate maps the model onto a tabular MDP on a level grid, which
gives exact objectives and exact parameter gradients for worst-case evaluation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from ..core_mdp import TabularMdp, occupancy, policy_evaluate
from ..param_transitions import (AscentResult, BallSet, BoxSimplex, GaussianMixtureTransition, ProductSet,
                                 RadialFeatures, generalized_tma, transition_grad_chain)

ETA_CENTER = (-2.0, 3.5)
ETA_RADIUS = 15.0
FEATURE_CENTER_S = (-1.3, -0.7)
FEATURE_CENTER_A = (0.1, 0.5)
FEATURE_WIDTH = (10.0, 5.0)
INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def default_demand(sigma: float = 1.0) -> GaussianMixtureTransition:
    return GaussianMixtureTransition(np.ones(1), np.array([ETA_CENTER]), np.array([sigma]))


def default_xi_set(demand: GaussianMixtureTransition, radius: float = ETA_RADIUS) -> ProductSet:
    """Box-simplex over weights (pinned for one component) times one L1 ball per component mean."""
    M = demand.n_components
    lower = np.ones(M) if M == 1 else np.zeros(M)
    return ProductSet([BoxSimplex(lower, np.ones(M))] + [BallSet(eta, radius, "l1") for eta in demand.etas])


@dataclass(frozen=True, eq=False)
class InventoryEnv:
    demand: GaussianMixtureTransition = field(default_factory=default_demand)
    zeta: RadialFeatures = field(default_factory=lambda: RadialFeatures(FEATURE_CENTER_S, FEATURE_CENTER_A,
                                                                        FEATURE_WIDTH))
    orders: tuple[float, ...] = (0.0, 1.0, 2.0, 3.0, 4.0)
    level_max: float = 20.0
    order_cost: float = 1.0
    holding_cost: float = 0.5
    shortage_cost: float = 3.0
    gamma: float = 0.9
    initial_level: float = 2.0
    policy_centers: tuple[float, ...] = (0.0, 2.5, 5.0, 7.5, 10.0, 15.0, 20.0)
    policy_width: float = 2.5

    def __post_init__(self) -> None:
        if self.level_max <= 0:
            raise ValueError("level_max must be positive")
        if not 0 <= self.initial_level <= self.level_max:
            raise ValueError("initial level outside [0, level_max]")
        if not 0 < self.gamma < 1 or self.policy_width <= 0 or len(self.orders) < 1:
            raise ValueError("invalid discount, policy width or order set")
        if min(self.order_cost, self.holding_cost, self.shortage_cost) < 0:
            raise ValueError("cost coefficients must be nonnegative")

    @property
    def n_actions(self) -> int:
        return len(self.orders)

    @property
    def n_policy_features(self) -> int:
        return self.n_actions * (len(self.policy_centers) + 1)

    def model(self, xi: np.ndarray | None) -> GaussianMixtureTransition:
        return self.demand if xi is None else self.demand.with_params(xi)

    def stage_cost(self, level: np.ndarray, order: np.ndarray, demand: np.ndarray) -> np.ndarray:
        nxt = np.clip(level + order - demand, 0.0, self.level_max)
        short = np.maximum(demand - level - order, 0.0)
        return self.order_cost * order + self.holding_cost * nxt + self.shortage_cost * short

    # -- sampler protocol -------------------------------------------------

    def reset(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.full(n, self.initial_level)

    def features(self, states: np.ndarray) -> np.ndarray:
        """One-hot action crossed with [1, RBF(x)]: shape (n, A, A * (centers + 1))."""
        x = np.asarray(states, dtype=float).reshape(-1)
        c = np.asarray(self.policy_centers)
        rbf = np.concatenate([np.ones((x.size, 1)),
                              np.exp(-0.5 * ((x[:, None] - c) / self.policy_width) ** 2)], axis=1)
        A, m = self.n_actions, rbf.shape[1]
        f = np.zeros((x.size, A, A * m))
        for a in range(A):
            f[:, a, a * m:(a + 1) * m] = rbf
        return f

    def step(self, states, actions, xi, rng):
        x = np.asarray(states, dtype=float)
        q = np.asarray(self.orders)[actions]
        d = self.model(xi).sample(self.zeta(x, q), rng)
        nxt = np.clip(x + q - d, 0.0, self.level_max)
        return nxt, self.stage_cost(x, q, d), np.zeros(x.size, bool), d

    def transition_score(self, xi, states, actions, outcomes):
        q = np.asarray(self.orders)[actions]
        return self.model(xi).score(self.zeta(states, q), outcomes)[1]


def inventory_step(env: InventoryEnv, state: float, action: int, rng: np.random.Generator,
                   xi: np.ndarray | None = None) -> tuple[float, float]:
    nxt, cost, _, _ = env.step(np.array([state]), np.array([action]), xi, rng)
    return float(nxt[0]), float(cost[0])


# ---------------------------------------------------------------------------
# discretized surrogate

def level_grid(env: InventoryEnv, step: float = 0.5) -> np.ndarray:
    n = int(round(env.level_max / step)) + 1
    return np.linspace(0.0, env.level_max, n)


def _pdf(z: np.ndarray) -> np.ndarray:
    finite = np.isfinite(z)
    return np.where(finite, INV_SQRT_2PI * np.exp(-0.5 * np.where(finite, z, 0.0) ** 2), 0.0)


def surrogate_kernel(env: InventoryEnv, xi: np.ndarray | None, grid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Kernel on ``grid`` (next level rounded to the nearest grid point) and its Jacobian dp/dxi.

    The Jacobian has shape (S, A, S, len(xi)); weight columns treat the weights as free coordinates.
    """
    gm = env.model(xi)
    S, A = grid.size, env.n_actions
    q = np.asarray(env.orders)
    mid = 0.5 * (grid[1:] + grid[:-1])
    lo_edge = np.concatenate([[-np.inf], mid])   # next level in (lo_edge, hi_edge] maps to the grid point
    hi_edge = np.concatenate([mid, [np.inf]])
    base = grid[:, None] + q[None, :]            # x + q
    # x + q - D lies in (lo, hi]  <=>  D in [base - hi, base - lo)
    d_lo = base[:, :, None] - hi_edge[None, None, :]
    d_hi = base[:, :, None] - lo_edge[None, None, :]
    zeta = env.zeta(grid[:, None], q[None, :])                # (S, A, n)
    mu = gm.means(zeta)                                       # (S, A, M)
    z_lo = (d_lo[..., None] - mu[:, :, None, :]) / gm.sigmas  # (S, A, S, M)
    z_hi = (d_hi[..., None] - mu[:, :, None, :]) / gm.sigmas
    mass = ndtr(z_hi) - ndtr(z_lo)
    kernel = mass @ gm.weights
    d_mu = gm.weights * (_pdf(z_lo) - _pdf(z_hi)) / gm.sigmas  # dP/dmu_m
    d_eta = d_mu[..., None] * zeta[:, :, None, None, :]        # (S, A, S, M, n)
    return kernel, np.concatenate([mass, d_eta.reshape(S, A, S, -1)], axis=-1)


def expected_shortage(env: InventoryEnv, xi: np.ndarray | None, grid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """E[(D - x - q)_+] on the grid and its gradient in xi, shapes (S, A) and (S, A, len(xi))."""
    gm = env.model(xi)
    q = np.asarray(env.orders)
    zeta = env.zeta(grid[:, None], q[None, :])
    gap = gm.means(zeta) - (grid[:, None] + q[None, :])[..., None]  # mu_m - (x + q)
    z = gap / gm.sigmas
    comp = gap * ndtr(z) + gm.sigmas * _pdf(z)                     # E[(D_m - x - q)_+]
    d_eta = (gm.weights * ndtr(z))[..., None] * zeta[:, :, None, :]
    S, A = comp.shape[:2]
    return comp @ gm.weights, np.concatenate([comp, d_eta.reshape(S, A, -1)], axis=-1)


def surrogate_model(env: InventoryEnv, xi: np.ndarray | None,
                    grid: np.ndarray) -> tuple[TabularMdp, np.ndarray, np.ndarray]:
    """Tabular surrogate started at the grid point nearest the initial level.

    Returns (mdp, dp/dxi, dcost/dxi). The shortage part of the stage cost is exact in
    expectation and is charged equally on every successor; holding is charged at the
    rounded successor level.
    """
    kernel, jac = surrogate_kernel(env, xi, grid)
    short, d_short = expected_shortage(env, xi, grid)
    q = np.asarray(env.orders)
    cost = (env.order_cost * q[None, :, None] + env.holding_cost * grid[None, None, :]
            + env.shortage_cost * short[:, :, None])
    rho = np.zeros(grid.size)
    rho[int(np.argmin(np.abs(grid - env.initial_level)))] = 1.0
    mdp = TabularMdp(cost=cost, kernel=kernel, rho=rho, gamma=env.gamma)
    return mdp, jac, env.shortage_cost * d_short


def grid_policy(env: InventoryEnv, theta: np.ndarray, grid: np.ndarray) -> np.ndarray:
    logits = env.features(grid) @ theta
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(axis=1, keepdims=True)


def surrogate_value_and_grad(env: InventoryEnv, pi: np.ndarray, xi: np.ndarray,
                             grid: np.ndarray) -> tuple[float, np.ndarray]:
    mdp, jac, d_cost = surrogate_model(env, xi, grid)
    J = float(mdp.rho @ policy_evaluate(mdp, pi, mdp.kernel))
    d = occupancy(mdp, pi, mdp.kernel)
    cost_part = np.einsum("sa,sak->k", d[:, None] * pi, d_cost) / (1.0 - mdp.gamma)
    return J, transition_grad_chain(mdp, pi, mdp.kernel, jac) + cost_part


def surrogate_objective(env: InventoryEnv, theta: np.ndarray, xi: np.ndarray | None,
                        grid: np.ndarray) -> float:
    mdp, _, _ = surrogate_model(env, xi, grid)
    return float(mdp.rho @ policy_evaluate(mdp, grid_policy(env, theta, grid), mdp.kernel))


def worst_case_objective(env: InventoryEnv, theta: np.ndarray, xi_set: ProductSet, grid: np.ndarray,
                         starts: list[np.ndarray], beta0: float = 0.1, n_iters: int = 100) -> AscentResult:
    """Largest surrogate objective found by generalized TMA from each start point."""
    pi = grid_policy(env, theta, grid)
    best: AscentResult | None = None
    for x0 in starts:
        res = generalized_tma(lambda xi: surrogate_value_and_grad(env, pi, xi, grid), x0, xi_set, beta0, n_iters)
        if best is None or res.J > best.J:
            best = res
    assert best is not None
    return best


def ball_vertices(env: InventoryEnv, radius: float = ETA_RADIUS) -> list[np.ndarray]:
    """Center and L1-ball vertices of the parameter set, as ascent starting points."""
    center = env.demand.params
    M = env.demand.n_components
    starts = [center]
    for k in range(M, center.size):
        for sign in (1.0, -1.0):
            x = center.copy()
            x[k] += sign * radius
            starts.append(x)
    return starts
