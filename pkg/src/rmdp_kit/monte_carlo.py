"""Sampling-based robust policy optimization.

Environments are simulated in batches. A policy is a linear softmax over
environment-supplied features, ``pi(a|s) ~ exp(features(s)[a] . theta)``.
Transition parameters ``xi`` enter only through the environment's sampler and
its score ``d log p^xi(outcome | s, a) / d xi``.

Sign conventions (costs are minimized):

============  ==========  =========================================
phase         direction   update
============  ==========  =========================================
inner (xi)    ascent      xi <- Proj(xi + beta gamma^i G_i score_i)
outer (theta) descent     theta <- theta - alpha gamma^j G_j grad log pi
============  ==========  =========================================
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Protocol

import numpy as np

from .core_mdp import TabularMdp
from .param_transitions import EntropyTransition, XiSet


class Environment(Protocol):
    gamma: float
    n_actions: int

    def reset(self, rng: np.random.Generator, n: int) -> np.ndarray: ...

    def features(self, states: np.ndarray) -> np.ndarray:
        """Policy features, shape (n, A, k)."""

    def step(self, states: np.ndarray, actions: np.ndarray, xi: np.ndarray | None,
             rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Returns (next_states, costs, done, outcomes); outcomes feed transition_score."""

    def transition_score(self, xi: np.ndarray, states: np.ndarray, actions: np.ndarray,
                         outcomes: np.ndarray) -> np.ndarray:
        """d log p^xi(outcome | s, a) / d xi, shape (n, len(xi))."""


# ---------------------------------------------------------------------------
# tabular environment

@dataclass(frozen=True, eq=False)
class TabularEnv:
    """Finite MDP simulator; with ``model`` set, kernels come from the entropy family at xi."""

    mdp: TabularMdp
    model: EntropyTransition | None = None

    @property
    def gamma(self) -> float:
        return self.mdp.gamma

    @property
    def n_actions(self) -> int:
        return self.mdp.n_actions

    def kernel(self, xi: np.ndarray | None) -> np.ndarray:
        if xi is None or self.model is None:
            return self.mdp.kernel
        return self.model.with_params(xi).kernel()

    def reset(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return _sample_rows(np.broadcast_to(self.mdp.rho, (n, self.mdp.n_states)), rng)

    def features(self, states: np.ndarray) -> np.ndarray:
        S, A = self.mdp.n_states, self.mdp.n_actions
        f = np.zeros((states.size, A, S * A))
        rows = np.arange(states.size)[:, None]
        f[rows, np.arange(A)[None, :], states[:, None] * A + np.arange(A)[None, :]] = 1.0
        return f

    def step(self, states, actions, xi, rng):
        p = self.kernel(xi)
        nxt = _sample_rows(p[states, actions], rng)
        return nxt, self.mdp.cost[states, actions, nxt], np.zeros(states.size, bool), nxt

    def transition_score(self, xi, states, actions, outcomes):
        if self.model is None:
            raise ValueError("tabular environment without a parametric model has no transition score")
        return self.model.with_params(xi).scores()[states, actions, outcomes]


def _sample_rows(p: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row of p by inverse CDF."""
    cdf = np.cumsum(p, axis=-1)
    u = rng.random(p.shape[0]) * cdf[:, -1]
    return np.minimum((u[:, None] >= cdf).sum(axis=1), p.shape[-1] - 1)


def tabular_theta(pi: np.ndarray) -> np.ndarray:
    """Softmax-tabular parameters reproducing a strictly positive policy."""
    pi = np.asarray(pi, dtype=float)
    if np.any(pi <= 0):
        raise ValueError("policy must be strictly positive")
    return np.log(pi).reshape(-1)


# ---------------------------------------------------------------------------
# policies and trajectories

def action_probs(env: Environment, theta: np.ndarray, states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(probabilities (n, A), features (n, A, k))."""
    f = env.features(states)
    logits = f @ theta
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(axis=1, keepdims=True), f


def log_policy_grad(probs: np.ndarray, feats: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """d log pi(a|s) / d theta = f(s, a) - E_pi f(s, .)."""
    n = actions.size
    return feats[np.arange(n), actions] - np.einsum("na,nak->nk", probs, feats)


@dataclass
class TrajectoryBatch:
    """n episodes padded to a common length; ``alive[i, t]`` marks steps actually taken."""

    states: np.ndarray     # (n, T+1, ...)
    actions: np.ndarray    # (n, T)
    costs: np.ndarray      # (n, T)
    outcomes: np.ndarray   # (n, T, ...)
    alive: np.ndarray      # (n, T)
    policy_grads: np.ndarray | None = None  # (n, T, k)

    @property
    def n(self) -> int:
        return self.actions.shape[0]

    @property
    def lengths(self) -> np.ndarray:
        return self.alive.sum(axis=1)

    def __getitem__(self, i: int) -> "Trajectory":
        T = int(self.alive[i].sum())
        return Trajectory(self.states[i, : T + 1], self.actions[i, :T], self.costs[i, :T], self.outcomes[i, :T])


@dataclass
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    costs: np.ndarray
    outcomes: np.ndarray

    def __post_init__(self) -> None:
        T = self.actions.shape[0]
        if self.states.shape[0] != T + 1 or self.costs.shape[0] != T:
            raise ValueError("trajectory arrays have inconsistent lengths")
        if not np.all(np.isfinite(self.costs)):
            raise ValueError("trajectory costs must be finite")

    @property
    def length(self) -> int:
        return self.actions.shape[0]


def sample_batch(env: Environment, theta: np.ndarray, xi: np.ndarray | None, n: int, horizon: int,
                 rng: np.random.Generator, keep_policy_grads: bool = False) -> TrajectoryBatch:
    """n episodes of at most ``horizon`` steps; an env with its own ``sample_batch`` method supplies them."""
    if horizon < 0 or n < 0:
        raise ValueError("horizon and batch size must be nonnegative")
    compiled = getattr(env, "sample_batch", None)
    if compiled is not None:
        return compiled(theta, xi, n, horizon, rng, keep_policy_grads)
    s = env.reset(rng, n)
    states = [s]
    actions, costs, outcomes, alive, pgrads = [], [], [], [], []
    live = np.ones(n, bool)
    for _ in range(horizon):
        probs, feats = action_probs(env, theta, s)
        a = _sample_rows(probs, rng)
        nxt, c, done, out = env.step(s, a, xi, rng)
        if not np.all(np.isfinite(nxt)):
            raise FloatingPointError("environment produced a non-finite state")
        if keep_policy_grads:
            pgrads.append(log_policy_grad(probs, feats, a))
        actions.append(a)
        costs.append(np.where(live, c, 0.0))
        outcomes.append(out)
        alive.append(live.copy())
        live = live & ~done
        # frozen episodes keep their terminal state
        s = np.where(alive[-1].reshape((-1,) + (1,) * (np.ndim(nxt) - 1)), nxt, s)
        states.append(s)
        if not live.any():
            break

    def stack(xs: list, shape: tuple, dtype) -> np.ndarray:
        return np.stack(xs, axis=1) if xs else np.zeros(shape, dtype)

    k = theta.size
    return TrajectoryBatch(
        states=np.stack(states, axis=1),
        actions=stack(actions, (n, 0), int),
        costs=stack(costs, (n, 0), float),
        outcomes=stack(outcomes, (n, 0), float),
        alive=stack(alive, (n, 0), bool),
        policy_grads=stack(pgrads, (n, 0, k), float) if keep_policy_grads else None,
    )


def sample_trajectory(env: Environment, theta: np.ndarray, horizon: int, rng: np.random.Generator,
                      xi: np.ndarray | None = None) -> Trajectory:
    return sample_batch(env, theta, xi, 1, horizon, rng)[0]


def returns_to_go(costs: np.ndarray, gamma: float) -> np.ndarray:
    """G[:, t] = sum_{j >= t} gamma^(j - t) costs[:, j]."""
    G = np.zeros_like(costs, dtype=float)
    acc = np.zeros(costs.shape[0])
    for t in range(costs.shape[1] - 1, -1, -1):
        acc = costs[:, t] + gamma * acc
        G[:, t] = acc
    return G


# ---------------------------------------------------------------------------
# estimators

@dataclass
class GradientEstimate:
    mean: np.ndarray
    stderr: np.ndarray
    per_trajectory: np.ndarray


def _summarize(per: np.ndarray) -> GradientEstimate:
    if per.shape[0] == 0:
        raise ValueError("empty trajectory batch")
    n = per.shape[0]
    sd = per.std(axis=0, ddof=1) if n > 1 else np.zeros(per.shape[1])
    return GradientEstimate(per.mean(axis=0), sd / np.sqrt(n), per)


def _weighted_scores(batch: TrajectoryBatch, scores: np.ndarray, gamma: float,
                     discount_step: bool = True) -> np.ndarray:
    G = returns_to_go(batch.costs, gamma)
    if discount_step:
        G = G * gamma ** np.arange(batch.costs.shape[1])
    w = np.where(batch.alive, G, 0.0)
    return np.einsum("nt,ntk->nk", w, scores)


def mc_transition_grad_estimate(batch: TrajectoryBatch, env: Environment, xi: np.ndarray,
                                gamma: float | None = None, discount_step: bool = True) -> GradientEstimate:
    """Per-trajectory sum_t gamma^t G_t d log p^xi(S_t, A_t, S_{t+1}) / d xi, averaged.

    Unbiased for dJ/dxi up to horizon truncation. Without the gamma^t factor
    (``discount_step=False``) it is the common biased reward-to-go variant.
    """
    gamma = env.gamma if gamma is None else gamma
    n, T = batch.actions.shape
    if n == 0:
        raise ValueError("empty trajectory batch")
    flat = lambda x: x.reshape((n * T,) + x.shape[2:])
    scores = env.transition_score(xi, flat(batch.states[:, :T]), flat(batch.actions), flat(batch.outcomes))
    scores = scores.reshape(n, T, -1)
    return _summarize(_weighted_scores(batch, np.where(batch.alive[..., None], scores, 0.0), gamma, discount_step))


def reinforce_estimate(batch: TrajectoryBatch, gamma: float, discount_step: bool = True) -> GradientEstimate:
    """Per-trajectory sum_t gamma^t G_t d log pi(A_t|S_t) / d theta, averaged."""
    if batch.policy_grads is None:
        raise ValueError("batch was sampled without policy gradients")
    return _summarize(_weighted_scores(batch, batch.policy_grads, gamma, discount_step))


def discounted_return(batch: TrajectoryBatch, gamma: float) -> np.ndarray:
    return (batch.costs * gamma ** np.arange(batch.costs.shape[1])).sum(axis=1)


# ---------------------------------------------------------------------------
# solvers

@dataclass(frozen=True)
class McConfig:
    n_passes: int = 100
    n_inner: int = 10          # M: episodes per transition pass
    n_outer: int = 10          # N: episodes per policy pass
    horizon: int = 100
    beta0: float = 0.1
    beta_ratio: float = 1.0    # beta_m = beta0 * beta_ratio**m over inner episodes
    alpha0: float = 0.01
    alpha_ratio: float = 1.0   # alpha_t = alpha0 * alpha_ratio**t over passes
    discount_step: bool = True
    batch: bool = False
    max_grad_norm: float | None = None  # gradient estimates are rescaled to this norm before the step

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ValueError("horizon cap must be at least 1")
        if min(self.n_passes, self.n_inner, self.n_outer) < 0:
            raise ValueError("episode counts must be nonnegative")
        if self.beta0 < 0 or self.alpha0 < 0 or self.beta_ratio <= 0 or self.alpha_ratio <= 0:
            raise ValueError("step sizes must be nonnegative with positive ratios")
        if self.max_grad_norm is not None and self.max_grad_norm <= 0:
            raise ValueError("max_grad_norm must be positive")

    def truncation_bound(self, gamma: float, cost_scale: float) -> float:
        return gamma ** self.horizon * cost_scale / (1.0 - gamma)


@dataclass(frozen=True)
class McTraceRow:
    pass_index: int
    phase: str
    episode: int
    J_estimate: float
    param_norm: float


@dataclass
class McReport:
    theta: np.ndarray
    xi: np.ndarray | None
    rows: list[McTraceRow] = field(default_factory=list)

    def J_trace(self, phase: str) -> np.ndarray:
        return np.array([r.J_estimate for r in self.rows if r.phase == phase])


def _clip(v: np.ndarray, limit: float | None) -> np.ndarray:
    if limit is None:
        return v
    norm = float(np.linalg.norm(v))
    return v if norm <= limit else v * (limit / norm)


def _guard(x: np.ndarray, what: str, where: str) -> None:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite {what} during {where}")


def _inner_pass(env: Environment, theta: np.ndarray, xi: np.ndarray, xi_set: XiSet, cfg: McConfig,
                rng: np.random.Generator, episode0: int, pass_index: int, rows: list[McTraceRow]) -> np.ndarray:
    g = env.gamma
    if cfg.batch:
        beta = cfg.beta0 * cfg.beta_ratio ** episode0
        batch = sample_batch(env, theta, xi, cfg.n_inner, cfg.horizon, rng)
        est = mc_transition_grad_estimate(batch, env, xi, g, cfg.discount_step)
        xi = xi_set.project(xi + beta * _clip(est.mean, cfg.max_grad_norm))
        _guard(xi, "transition parameters", "inner pass")
        J = discounted_return(batch, g)
        for m in range(cfg.n_inner):
            rows.append(McTraceRow(pass_index, "inner", episode0 + m, float(J[m]), float(np.linalg.norm(xi))))
        return xi
    for m in range(cfg.n_inner):
        beta = cfg.beta0 * cfg.beta_ratio ** (episode0 + m)
        batch = sample_batch(env, theta, xi, 1, cfg.horizon, rng)
        T = int(batch.alive[0].sum())
        G = returns_to_go(batch.costs[:, :T], g)[0]
        for i in range(T):
            score = env.transition_score(xi, batch.states[:, i], batch.actions[:, i], batch.outcomes[:, i])[0]
            disc = g ** i if cfg.discount_step else 1.0
            xi = xi_set.project(xi + beta * _clip(disc * G[i] * score, cfg.max_grad_norm))
        _guard(xi, "transition parameters", f"inner episode {episode0 + m}")
        rows.append(McTraceRow(pass_index, "inner", episode0 + m, float(discounted_return(batch, g)[0]),
                               float(np.linalg.norm(xi))))
    return xi


def _outer_pass(env: Environment, theta: np.ndarray, xi: np.ndarray | None, alpha: float, cfg: McConfig,
                rng: np.random.Generator, episode0: int, pass_index: int, rows: list[McTraceRow]) -> np.ndarray:
    g = env.gamma
    if cfg.batch:
        batch = sample_batch(env, theta, xi, cfg.n_outer, cfg.horizon, rng, keep_policy_grads=True)
        theta = theta - alpha * _clip(reinforce_estimate(batch, g, cfg.discount_step).mean, cfg.max_grad_norm)
        _guard(theta, "policy parameters", "outer pass")
        J = discounted_return(batch, g)
        for n in range(cfg.n_outer):
            rows.append(McTraceRow(pass_index, "outer", episode0 + n, float(J[n]), float(np.linalg.norm(theta))))
        return theta
    for n in range(cfg.n_outer):
        batch = sample_batch(env, theta, xi, 1, cfg.horizon, rng, keep_policy_grads=True)
        T = int(batch.alive[0].sum())
        G = returns_to_go(batch.costs[:, :T], g)[0]
        for j in range(T):
            s = batch.states[:, j]
            probs, feats = action_probs(env, theta, s)
            score = log_policy_grad(probs, feats, batch.actions[:, j])[0]
            disc = g ** j if cfg.discount_step else 1.0
            theta = theta - alpha * _clip(disc * G[j] * score, cfg.max_grad_norm)
        _guard(theta, "policy parameters", f"outer episode {episode0 + n}")
        rows.append(McTraceRow(pass_index, "outer", episode0 + n, float(discounted_return(batch, g)[0]),
                               float(np.linalg.norm(theta))))
    return theta


def mctma(env: Environment, theta: np.ndarray, xi0: np.ndarray, xi_set: XiSet, config: McConfig,
          rng: np.random.Generator) -> McReport:
    """Monte-Carlo transition mirror ascent for a fixed policy: n_passes x n_inner episodes."""
    xi = xi_set.project(np.asarray(xi0, dtype=float))
    rows: list[McTraceRow] = []
    theta = np.asarray(theta, dtype=float)
    for k in range(config.n_passes):
        xi = _inner_pass(env, theta, xi, xi_set, config, rng, k * config.n_inner, k, rows)
    return McReport(theta, xi, rows)


def rmcpmd(env: Environment, theta0: np.ndarray, xi0: np.ndarray, xi_set: XiSet, config: McConfig,
           rng: np.random.Generator) -> McReport:
    """Robust Monte-Carlo policy mirror descent: alternate transition ascent and policy descent passes."""
    theta = np.array(theta0, dtype=float)
    xi = xi_set.project(np.asarray(xi0, dtype=float))
    rows: list[McTraceRow] = []
    for k in range(config.n_passes):
        xi = _inner_pass(env, theta, xi, xi_set, config, rng, k * config.n_inner, k, rows)
        alpha = config.alpha0 * config.alpha_ratio ** k
        theta = _outer_pass(env, theta, xi, alpha, config, rng, k * config.n_outer, k, rows)
    return McReport(theta, xi, rows)


def mc_pg(env: Environment, theta0: np.ndarray, config: McConfig, rng: np.random.Generator,
          xi: np.ndarray | None = None) -> McReport:
    """Non-robust REINFORCE on the nominal (or fixed-xi) environment."""
    theta = np.array(theta0, dtype=float)
    rows: list[McTraceRow] = []
    for k in range(config.n_passes):
        alpha = config.alpha0 * config.alpha_ratio ** k
        theta = _outer_pass(env, theta, xi, alpha, config, rng, k * config.n_outer, k, rows)
    return McReport(theta, xi, rows)


def trace_records(report: McReport) -> list[dict[str, Any]]:
    return [dict(pass_=r.pass_index, phase=r.phase, episode=r.episode, J_estimate=r.J_estimate,
                 param_norm=r.param_norm) for r in report.rows]
