"""Robust policy evaluation: transition mirror ascent and robust Bellman operators.

The adversary maximises the agent's cost over a rectangular ambiguity set. For a
fixed policy ``pi`` the robust Bellman policy operator is

    (T_pi v)_s = max_{p_s in P_s} sum_a pi[s,a] p[s,a] . (c[s,a] + gamma v),

a gamma-contraction whose fixed point is the robust value of ``pi``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.optimize import linprog

from .ambiguity import AmbiguitySet, SaRectL1Set, SRectL1Set
from .core_mdp import (
    TabularMdp,
    action_next_state_values,
    occupancy,
    policy_evaluate,
    q_from_values,
)


@dataclass(frozen=True)
class ConstantStep:
    beta: float


@dataclass(frozen=True)
class GeometricStep:
    """beta_t = beta0 * ratio**t; ratio >= 1 / (1 - (1 - gamma) / M) gives a linear rate."""

    beta0: float
    ratio: float


@dataclass(frozen=True)
class InfiniteStep:
    """The beta -> infinity limit: each step applies the robust Bellman policy update."""


InnerSchedule = Union[ConstantStep, GeometricStep, InfiniteStep]


def geometric_ratio(gamma: float, mismatch: float) -> float:
    """Smallest step-size growth ratio with a linear TMA rate."""
    return 1.0 / (1.0 - (1.0 - gamma) / mismatch)


@dataclass(frozen=True)
class InnerConfig:
    schedule: InnerSchedule = InfiniteStep()
    max_iters: int = 1000
    residual_tol: float = 1e-6
    geometry: str = "se"

    def __post_init__(self) -> None:
        if self.geometry != "se":
            raise ValueError("inner proximal steps support squared Euclidean geometry only")
        if self.max_iters < 1 or self.residual_tol <= 0:
            raise ValueError("max_iters must be positive and residual_tol > 0")
        s = self.schedule
        if isinstance(s, ConstantStep) and s.beta < 0:
            raise ValueError("step size must be nonnegative")
        if isinstance(s, GeometricStep) and (s.beta0 <= 0 or s.ratio < 1):
            raise ValueError("geometric schedule needs beta0 > 0 and ratio >= 1")

    def beta(self, t: int) -> float:
        s = self.schedule
        if isinstance(s, ConstantStep):
            return s.beta
        if isinstance(s, GeometricStep):
            return s.beta0 * s.ratio ** t
        return float("inf")


@dataclass
class InnerResult:
    kernel: np.ndarray
    J: float
    residual: float
    iters: int
    converged: bool
    trace: list[tuple[int, float, float, float]] = field(default_factory=list)


# ---------------------------------------------------------------------------
# gradients and identities

def transition_grad(mdp: TabularMdp, pi: np.ndarray, p: np.ndarray) -> np.ndarray:
    """dJ/dp[s,a,s'] = d(s) pi[s,a] (c[s,a,s'] + gamma v[s']) / (1 - gamma)."""
    v = policy_evaluate(mdp, pi, p)
    d = occupancy(mdp, pi, p)
    return (d[:, None] * pi)[:, :, None] * action_next_state_values(mdp, v) / (1.0 - mdp.gamma)


def kernel_perf_diff_check(mdp: TabularMdp, pi: np.ndarray, p1: np.ndarray, p2: np.ndarray) -> tuple[float, float]:
    """Residuals of both performance-difference identities across kernels.

    First:  J(p1) - J(p2) = 1/(1-g) sum_s d^{p2}(s) sum_a pi sum_s' (p1 - p2) g^{p1}
    Second: J(p1) - J(p2) = 1/(1-g) sum_s d^{p1}(s) sum_a pi sum_s' (p1 - p2) g^{p2}
    with g^p[s,a,s'] = c[s,a,s'] + gamma v^{pi,p}[s'].
    """
    scale = 1.0 / (1.0 - mdp.gamma)
    v1, v2 = policy_evaluate(mdp, pi, p1), policy_evaluate(mdp, pi, p2)
    d1, d2 = occupancy(mdp, pi, p1), occupancy(mdp, pi, p2)
    g1, g2 = action_next_state_values(mdp, v1), action_next_state_values(mdp, v2)
    lhs = float(mdp.rho @ (v1 - v2))
    diff = p1 - p2
    rhs1 = scale * float(np.einsum("s,sa,sat,sat->", d2, pi, diff, g1))
    rhs2 = scale * float(np.einsum("s,sa,sat,sat->", d1, pi, diff, g2))
    return abs(lhs - rhs1), abs(lhs - rhs2)


# ---------------------------------------------------------------------------
# robust Bellman operators

def robust_bellman_policy_step(mdp: TabularMdp, pi: np.ndarray, v: np.ndarray,
                               amb: AmbiguitySet) -> tuple[np.ndarray, np.ndarray]:
    """(T_pi v, maximising kernel)."""
    z = action_next_state_values(mdp, v)
    p = amb.linmax(z, pi)
    return np.einsum("sa,sat,sat->s", pi, p, z), p


def bellman_gap(mdp: TabularMdp, pi: np.ndarray, p: np.ndarray, amb: AmbiguitySet,
                v: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Certified bound on max_{p' in set} J(pi, p') - J(pi, p), plus the one-step kernel.

    With delta = max_s (T_pi v - v)_s for v = v^{pi,p}, the robust value satisfies
    v <= v_rob <= v + delta / (1 - gamma).
    """
    if v is None:
        v = policy_evaluate(mdp, pi, p)
    tv, p_next = robust_bellman_policy_step(mdp, pi, v, amb)
    delta = max(float(np.max(tv - v)), 0.0)
    return delta / (1.0 - mdp.gamma), p_next


def tma_step(mdp: TabularMdp, pi: np.ndarray, p_t: np.ndarray, amb: AmbiguitySet,
             beta: float, v: np.ndarray | None = None) -> np.ndarray:
    """One transition mirror ascent step with squared Euclidean proximal term."""
    if v is None:
        v = policy_evaluate(mdp, pi, p_t)
    g = action_next_state_values(mdp, v)
    if np.isinf(beta):
        return amb.linmax(g, pi)
    if beta == 0:
        return np.array(p_t, dtype=float, copy=True)
    if isinstance(amb, SRectL1Set):
        g = pi[:, :, None] * g
    return amb.prox(p_t, g, beta)


def tma_solve(mdp: TabularMdp, pi: np.ndarray, amb: AmbiguitySet, config: InnerConfig,
              p0: np.ndarray | None = None) -> InnerResult:
    """Iterate TMA from p0 (default: nominal) until the certified gap is within tolerance."""
    p = np.array(amb.nominal if p0 is None else p0, dtype=float)
    trace: list[tuple[int, float, float, float]] = []
    best: tuple[float, np.ndarray, float] | None = None
    converged = False
    t = 0
    for t in range(config.max_iters + 1):
        v = policy_evaluate(mdp, pi, p)
        J = float(mdp.rho @ v)
        residual, _ = bellman_gap(mdp, pi, p, amb, v)
        beta = config.beta(t)
        trace.append((t, J, residual, beta))
        if best is None or J >= best[0]:
            best = (J, p, residual)
        if residual <= config.residual_tol:
            best = (J, p, residual)
            converged = True
            break
        if t == config.max_iters:
            break
        p = tma_step(mdp, pi, p, amb, beta, v)
    J, p, residual = best
    return InnerResult(kernel=p, J=J, residual=residual, iters=t, converged=converged, trace=trace)


def robust_value_iterate_policy(mdp: TabularMdp, pi: np.ndarray, amb: AmbiguitySet, tol: float = 1e-8,
                                max_iters: int = 100_000) -> tuple[np.ndarray, np.ndarray]:
    """Fixed-point iteration of T_pi until the value error is at most tol."""
    v = np.zeros(mdp.n_states)
    stop = tol * (1.0 - mdp.gamma) / mdp.gamma
    for _ in range(max_iters):
        tv, p = robust_bellman_policy_step(mdp, pi, v, amb)
        done = np.max(np.abs(tv - v)) <= stop
        v = tv
        if done:
            break
    return v, p


def robust_evaluate(mdp: TabularMdp, pi: np.ndarray, amb: AmbiguitySet, tol: float = 1e-12,
                    max_iters: int = 1000) -> tuple[np.ndarray, np.ndarray]:
    """Robust value of pi by adversarial policy iteration: p <- linmax(c + gamma v^{pi,p}).

    Values increase monotonically and reach the fixed point of T_pi in finitely
    many steps up to rounding; the loop stops when the certified gap is below tol.
    """
    p = np.array(amb.nominal, dtype=float)
    v = policy_evaluate(mdp, pi, p)
    for _ in range(max_iters):
        gap, p_next = bellman_gap(mdp, pi, p, amb, v)
        if gap <= tol * max(1.0, mdp.cost_scale):
            break
        v_next = policy_evaluate(mdp, pi, p_next)
        if np.all(v_next <= v):
            break
        p, v = p_next, v_next
    return v, p


def robust_objective(mdp: TabularMdp, pi: np.ndarray, amb: AmbiguitySet, tol: float = 1e-12) -> float:
    """Phi(pi) = max_{p in set} J(pi, p)."""
    v, _ = robust_evaluate(mdp, pi, amb, tol)
    return float(mdp.rho @ v)


# ---------------------------------------------------------------------------
# robust optimality operator

def _state_minimax_lp(c: np.ndarray, z: np.ndarray, kappa: float) -> tuple[float, np.ndarray]:
    """min_{w in simplex} max_{p_s in P_s} sum_a w_a p_a . z_a for one s-rectangular state.

    The inner maximisation is replaced by its LP dual, giving one joint LP in
    (w, nu, lam, beta): minimise sum_a w_a z_a.c_a + lam kappa + sum beta c subject to
    w_a z_ai - nu_a - lam <= 0 and nu_a - w_a z_ai - lam - beta_ai <= 0.
    """
    A, n = z.shape
    nw, nnu, nb = A, A, A * n
    nv = nw + nnu + 1 + nb
    iw, inu, il, ib = 0, nw, nw + nnu, nw + nnu + 1
    cost = np.zeros(nv)
    cost[iw:iw + A] = np.einsum("ai,ai->a", z, c)
    cost[il] = kappa
    cost[ib:] = c.reshape(-1)
    rows = []
    for a in range(A):
        for i in range(n):
            r = np.zeros(nv)
            r[iw + a] = z[a, i]
            r[inu + a] = -1.0
            r[il] = -1.0
            rows.append(r)
            r = np.zeros(nv)
            r[iw + a] = -z[a, i]
            r[inu + a] = 1.0
            r[il] = -1.0
            r[ib + a * n + i] = -1.0
            rows.append(r)
    A_eq = np.zeros((1, nv))
    A_eq[0, iw:iw + A] = 1.0
    bounds = [(0, None)] * nw + [(None, None)] * nnu + [(0, None)] * (1 + nb)
    res = linprog(cost, A_ub=np.array(rows), b_ub=np.zeros(len(rows)), A_eq=A_eq, b_eq=[1.0],
                  bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"state minimax LP failed: {res.message}")
    w = np.maximum(res.x[iw:iw + A], 0.0)
    return float(res.fun), w / w.sum()


def robust_greedy(mdp: TabularMdp, v: np.ndarray, amb: AmbiguitySet) -> tuple[np.ndarray, np.ndarray]:
    """(T v, greedy policy) for the robust optimality operator."""
    z = action_next_state_values(mdp, v)
    S, A = mdp.n_states, mdp.n_actions
    if isinstance(amb, SaRectL1Set):
        q = q_from_values(mdp, amb.linmax(z), v)
        pi = np.zeros((S, A))
        pi[np.arange(S), np.argmin(q, axis=1)] = 1.0
        return q.min(axis=1), pi
    tv = np.empty(S)
    pi = np.empty((S, A))
    for s in range(S):
        tv[s], pi[s] = _state_minimax_lp(amb.nominal[s], z[s], float(amb.kappa[s]))
    return tv, pi


def robust_value_iterate_optimal(mdp: TabularMdp, amb: AmbiguitySet, tol: float = 1e-8,
                                 max_rounds: int = 200) -> tuple[np.ndarray, np.ndarray, np.ndarray, bool]:
    """Optimal robust value, a greedy optimal policy, its worst kernel and a convergence flag.

    Robust policy iteration: greedy step of the optimality operator followed by an
    exact robust evaluation. Stops once max_s (v - T v)_s / (1 - gamma) <= tol, which
    bounds the distance of v to the optimal robust value.
    """
    pi = np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions)
    v, p = robust_evaluate(mdp, pi, amb)
    converged = False
    for _ in range(max_rounds):
        tv, pi_next = robust_greedy(mdp, v, amb)
        if np.max(np.abs(v - tv)) / (1.0 - mdp.gamma) <= tol:
            converged = True
            break
        v_next, p_next = robust_evaluate(mdp, pi_next, amb)
        if np.all(v_next >= v - 1e-15 * max(1.0, mdp.cost_scale)):
            # no progress from policy iteration; fall back on a value-iteration step
            v_next, p_next = tv, robust_bellman_policy_step(mdp, pi_next, tv, amb)[1]
        pi, v, p = pi_next, v_next, p_next
    return v, pi, p, converged


def nominal_value_iterate_optimal(mdp: TabularMdp, tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """Classical policy iteration on the nominal kernel; returns (v*, deterministic pi*)."""
    S, A = mdp.n_states, mdp.n_actions
    pi = np.full((S, A), 1.0 / A)
    v = policy_evaluate(mdp, pi, mdp.kernel)
    for _ in range(1000):
        q = q_from_values(mdp, mdp.kernel, v)
        pi_next = np.zeros((S, A))
        pi_next[np.arange(S), np.argmin(q, axis=1)] = 1.0
        v_next = policy_evaluate(mdp, pi_next, mdp.kernel)
        if np.max(np.abs(v_next - v)) <= tol:
            return v_next, pi_next
        pi, v = pi_next, v_next
    return v, pi

