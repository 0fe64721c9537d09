"""Exact tabular MDP computations.

Arrays follow one layout throughout the package:

* kernel ``p[s, a, s']`` and cost ``c[s, a, s']`` of shape (S, A, S)
* policy ``pi[s, a]`` of shape (S, A), rows on the simplex
* values ``v[s]``, action values ``q[s, a]``

Costs are minimised by the agent. All functions are pure.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any

import numpy as np

ROW_TOL = 1e-10


def check_distribution(x: np.ndarray, axis: int = -1, tol: float = ROW_TOL, name: str = "array") -> None:
    if np.any(~np.isfinite(x)):
        raise ValueError(f"{name} has non-finite entries")
    if np.any(x < -tol):
        raise ValueError(f"{name} has negative entries")
    if np.max(np.abs(x.sum(axis=axis) - 1.0), initial=0.0) > tol:
        raise ValueError(f"{name} rows do not sum to one")


def check_kernel(p: np.ndarray, n_states: int | None = None, n_actions: int | None = None,
                 square: bool = True) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 3 or (square and p.shape[0] != p.shape[2]):
        raise ValueError(f"kernel must have shape (S, A, S), got {p.shape}")
    if n_states is not None and p.shape[0] != n_states:
        raise ValueError(f"kernel has {p.shape[0]} states, expected {n_states}")
    if n_actions is not None and p.shape[1] != n_actions:
        raise ValueError(f"kernel has {p.shape[1]} actions, expected {n_actions}")
    check_distribution(p, name="kernel")
    return p


def check_policy(pi: np.ndarray, n_states: int | None = None, n_actions: int | None = None) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    if pi.ndim != 2:
        raise ValueError(f"policy must have shape (S, A), got {pi.shape}")
    if (n_states is not None and pi.shape[0] != n_states) or (n_actions is not None and pi.shape[1] != n_actions):
        raise ValueError(f"policy shape {pi.shape} does not match ({n_states}, {n_actions})")
    check_distribution(pi, name="policy")
    return pi


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite discounted-cost MDP with a nominal transition kernel."""

    cost: np.ndarray
    kernel: np.ndarray
    rho: np.ndarray
    gamma: float

    def __post_init__(self) -> None:
        cost = np.asarray(self.cost, dtype=float)
        if cost.ndim != 3 or cost.shape[0] != cost.shape[2]:
            raise ValueError(f"cost must have shape (S, A, S), got {cost.shape}")
        if not np.all(np.isfinite(cost)):
            raise ValueError("cost entries must be finite")
        S, A = cost.shape[:2]
        kernel = check_kernel(self.kernel, S, A)
        rho = np.asarray(self.rho, dtype=float)
        if rho.shape != (S,):
            raise ValueError(f"rho must have shape ({S},), got {rho.shape}")
        check_distribution(rho, tol=1e-12, name="rho")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        for name, arr in (("cost", cost), ("kernel", kernel), ("rho", rho)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def n_states(self) -> int:
        return self.cost.shape[0]

    @property
    def n_actions(self) -> int:
        return self.cost.shape[1]

    @property
    def cost_scale(self) -> float:
        """max |c|; values of nonnegative-cost models lie in [0, cost_scale / (1 - gamma)]."""
        return float(np.max(np.abs(self.cost), initial=0.0))

    def with_kernel(self, kernel: np.ndarray) -> "TabularMdp":
        return TabularMdp(self.cost, kernel, self.rho, self.gamma)

    def to_dict(self) -> dict[str, Any]:
        return {
            "S": self.n_states,
            "A": self.n_actions,
            "gamma": self.gamma,
            "rho": self.rho.tolist(),
            "cost": self.cost.tolist(),
            "kernel": self.kernel.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TabularMdp":
        mdp = cls(
            cost=np.array(data["cost"], dtype=float),
            kernel=np.array(data["kernel"], dtype=float),
            rho=np.array(data["rho"], dtype=float),
            gamma=float(data["gamma"]),
        )
        if (mdp.n_states, mdp.n_actions) != (data["S"], data["A"]):
            raise ValueError("declared S/A do not match array shapes")
        return mdp

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "TabularMdp":
        return cls.from_dict(json.loads(text))


def _check_inputs(mdp: TabularMdp, pi: np.ndarray, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pi = np.asarray(pi, dtype=float)
    p = np.asarray(p, dtype=float)
    S, A = mdp.n_states, mdp.n_actions
    if pi.shape != (S, A):
        raise ValueError(f"policy shape {pi.shape} does not match ({S}, {A})")
    if p.shape != (S, A, S):
        raise ValueError(f"kernel shape {p.shape} does not match ({S}, {A}, {S})")
    return pi, p


def state_transition(pi: np.ndarray, p: np.ndarray) -> np.ndarray:
    """P_pi[s, s'] = sum_a pi[s, a] p[s, a, s']."""
    return np.einsum("sa,sat->st", pi, p)


def expected_cost(mdp: TabularMdp, pi: np.ndarray, p: np.ndarray) -> np.ndarray:
    """c_pi[s] = sum_{a, s'} pi[s, a] p[s, a, s'] c[s, a, s']."""
    return np.einsum("sa,sat,sat->s", pi, p, mdp.cost)


def policy_evaluate(mdp: TabularMdp, pi: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Value vector v solving (I - gamma P_pi) v = c_pi by LU."""
    pi, p = _check_inputs(mdp, pi, p)
    P = state_transition(pi, p)
    system = np.eye(mdp.n_states) - mdp.gamma * P
    return np.linalg.solve(system, expected_cost(mdp, pi, p))


def action_next_state_values(mdp: TabularMdp, v: np.ndarray) -> np.ndarray:
    """g[s, a, s'] = c[s, a, s'] + gamma v[s']."""
    return mdp.cost + mdp.gamma * np.asarray(v)[None, None, :]


def q_from_values(mdp: TabularMdp, p: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.einsum("sat,sat->sa", p, action_next_state_values(mdp, v))


def q_values(mdp: TabularMdp, pi: np.ndarray, p: np.ndarray) -> np.ndarray:
    v = policy_evaluate(mdp, pi, p)
    return q_from_values(mdp, p, v)


def advantage(mdp: TabularMdp, pi: np.ndarray, p: np.ndarray) -> np.ndarray:
    v = policy_evaluate(mdp, pi, p)
    return q_from_values(mdp, p, v) - v[:, None]


def occupancy(mdp: TabularMdp, pi: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Discounted state occupancy d = (1 - gamma) rho^T (I - gamma P_pi)^{-1}."""
    pi, p = _check_inputs(mdp, pi, p)
    P = state_transition(pi, p)
    system = np.eye(mdp.n_states) - mdp.gamma * P.T
    d = np.linalg.solve(system, (1.0 - mdp.gamma) * mdp.rho)
    d = np.maximum(d, 0.0)
    return d / d.sum()


def objective(mdp: TabularMdp, pi: np.ndarray, p: np.ndarray) -> float:
    """J_rho(pi, p) = rho^T v."""
    return float(mdp.rho @ policy_evaluate(mdp, pi, p))


def grad_direct(mdp: TabularMdp, pi: np.ndarray, p: np.ndarray) -> np.ndarray:
    """dJ/dpi[s, a] = d(s) q[s, a] / (1 - gamma)."""
    pi, p = _check_inputs(mdp, pi, p)
    v = policy_evaluate(mdp, pi, p)
    q = q_from_values(mdp, p, v)
    d = occupancy(mdp, pi, p)
    return d[:, None] * q / (1.0 - mdp.gamma)


def softmax_policy(theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    z = theta - theta.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def grad_softmax(mdp: TabularMdp, theta: np.ndarray, p: np.ndarray) -> np.ndarray:
    """dJ/dtheta[s, a] = d(s) pi[s, a] psi[s, a] / (1 - gamma) for tabular logits."""
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise ValueError("logits must be finite")
    pi = softmax_policy(theta)
    pi, p = _check_inputs(mdp, pi, p)
    v = policy_evaluate(mdp, pi, p)
    psi = q_from_values(mdp, p, v) - v[:, None]
    d = occupancy(mdp, pi, p)
    return d[:, None] * pi * psi / (1.0 - mdp.gamma)


def perf_diff_check(mdp: TabularMdp, pi1: np.ndarray, pi2: np.ndarray, p: np.ndarray) -> tuple[float, float]:
    """Residuals |LHS - RHS| of both policy performance-difference identities.

    First:  J(pi1) - J(pi2) = 1/(1-g) sum_s d^{pi1}(s) sum_a pi1[s,a] psi^{pi2}[s,a]
    Second: J(pi2) - J(pi1) = 1/(1-g) sum_s d^{pi1}(s) sum_a (pi2 - pi1)[s,a] q^{pi2}[s,a]
    """
    g = mdp.gamma
    v2 = policy_evaluate(mdp, pi2, p)
    q2 = q_from_values(mdp, p, v2)
    d1 = occupancy(mdp, pi1, p)
    j1 = objective(mdp, pi1, p)
    j2 = float(mdp.rho @ v2)
    rhs1 = float(np.sum(d1[:, None] * pi1 * (q2 - v2[:, None]))) / (1.0 - g)
    rhs2 = float(np.sum(d1[:, None] * (pi2 - pi1) * q2)) / (1.0 - g)
    return abs((j1 - j2) - rhs1), abs((j2 - j1) - rhs2)


def random_mdp(rng: np.random.Generator, n_states: int, n_actions: int, gamma: float = 0.9,
               cost_max: float = 1.0, dense: bool = True) -> TabularMdp:
    """Random MDP with Dirichlet(1) rows, uniform costs in [0, cost_max] and a random interior rho."""
    kernel = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    if not dense:
        mask = rng.random(kernel.shape) < 0.5
        mask[..., 0] = True
        kernel = np.where(mask, kernel, 0.0)
        kernel /= kernel.sum(axis=-1, keepdims=True)
    cost = cost_max * rng.random((n_states, n_actions, n_states))
    rho = rng.dirichlet(np.ones(n_states))
    return TabularMdp(cost=cost, kernel=kernel, rho=rho, gamma=gamma)


def random_policy(rng: np.random.Generator, n_states: int, n_actions: int) -> np.ndarray:
    return rng.dirichlet(np.ones(n_actions), size=n_states)


def uniform_policy(n_states: int, n_actions: int) -> np.ndarray:
    return np.full((n_states, n_actions), 1.0 / n_actions)
