"""Cart-pole balancing under a multiplicative model disturbance.

The deterministic successor s_bar comes from the classic Euler-integrated
cart-pole; the actual successor is drawn from N((1 + delta) s_bar, noise_var I).
Each surviving step costs 0 and a failure (angle or position limit) costs 1.
The transition parameter xi is the scalar delta.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from ..monte_carlo import TrajectoryBatch

GRAVITY = 9.8
MASS_CART = 1.0
MASS_POLE = 0.1
HALF_LENGTH = 0.5
FORCE = 10.0
DT = 0.02
ANGLE_LIMIT = 12.0 * math.pi / 180.0
POSITION_LIMIT = 2.4


def cartpole_physics(states: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """One explicit Euler step of the classic frictionless cart-pole; action 1 pushes right."""
    x, x_dot, th, th_dot = np.moveaxis(np.asarray(states, dtype=float), -1, 0)
    force = np.where(np.asarray(actions) == 1, FORCE, -FORCE)
    cos, sin = np.cos(th), np.sin(th)
    total = MASS_CART + MASS_POLE
    pml = MASS_POLE * HALF_LENGTH
    temp = (force + pml * th_dot ** 2 * sin) / total
    th_acc = (GRAVITY * sin - cos * temp) / (HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * cos ** 2 / total))
    x_acc = temp - pml * th_acc * cos / total
    return np.stack([x + DT * x_dot, x_dot + DT * x_acc, th + DT * th_dot, th_dot + DT * th_acc], axis=-1)


def lattice_centers(scales: tuple[float, float, float, float]) -> np.ndarray:
    """2^4 = 16 centers at +-scale/2 in each state dimension."""
    grid = np.array(np.meshgrid(*[(-0.5 * s, 0.5 * s) for s in scales], indexing="ij"))
    return grid.reshape(4, -1).T


@numba.njit(cache=True)
def _physics_one(x, x_dot, th, th_dot, action):
    force = FORCE if action == 1 else -FORCE
    cos, sin = math.cos(th), math.sin(th)
    total = MASS_CART + MASS_POLE
    pml = MASS_POLE * HALF_LENGTH
    temp = (force + pml * th_dot * th_dot * sin) / total
    th_acc = (GRAVITY * sin - cos * temp) / (HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * cos * cos / total))
    x_acc = temp - pml * th_acc * cos / total
    return x + DT * x_dot, x_dot + DT * x_acc, th + DT * th_dot, th_dot + DT * th_acc


@numba.njit(cache=True)
def _rbf_right(s, weights, centers, inv_scales, r):
    """Fill r with [1, rbf(s)] and return P(action 1 | s) for logits r . weights[a]."""
    r[0] = 1.0
    z = weights[1, 0] - weights[0, 0]
    for j in range(centers.shape[0]):
        sq = 0.0
        for k in range(4):
            d = s[k] * inv_scales[k] - centers[j, k]
            sq += d * d
        r[j + 1] = math.exp(-0.5 * sq)
        z += (weights[1, j + 1] - weights[0, j + 1]) * r[j + 1]
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@numba.njit(cache=True)
def _rollout(s0, weights, centers, inv_scales, deltas, sd, horizon, record, grads_too, rng):
    """Simulate episodes one after another.

    Per step the draws are one uniform for the action, then four normals when sd > 0.
    With ``record`` the padded path is returned in the generic batch layout: finished
    episodes repeat their terminal state, and actions, outcomes and scores are zero
    past the end. Otherwise only lengths and failure flags are meaningful.
    """
    n = s0.shape[0]
    m = centers.shape[0] + 1
    T = horizon if record else 0
    G = T if grads_too else 0
    states = np.empty((n, T + 1, 4))
    actions = np.zeros((n, T), dtype=np.int64)
    outcomes = np.zeros((n, T, 8))
    grads = np.zeros((n, G, 2 * m))
    lengths = np.zeros(n, dtype=np.int64)
    failed = np.zeros(n, dtype=np.bool_)
    s = np.empty(4)
    r = np.empty(m)
    for i in range(n):
        for k in range(4):
            s[k] = s0[i, k]
        if record:
            states[i, 0, :] = s
        scale = 1.0 + deltas[i]
        for t in range(horizon):
            p1 = _rbf_right(s, weights, centers, inv_scales, r)
            a = 1 if rng.random() < p1 else 0
            b0, b1, b2, b3 = _physics_one(s[0], s[1], s[2], s[3], a)
            s[0], s[1], s[2], s[3] = scale * b0, scale * b1, scale * b2, scale * b3
            if sd > 0:
                for k in range(4):
                    s[k] += sd * rng.standard_normal()
            lengths[i] = t + 1
            if record:
                actions[i, t] = a
                outcomes[i, t, 0], outcomes[i, t, 1], outcomes[i, t, 2], outcomes[i, t, 3] = b0, b1, b2, b3
                outcomes[i, t, 4:] = s
                states[i, t + 1, :] = s
                if grads_too:
                    w1 = a - p1
                    for j in range(m):
                        grads[i, t, j] = -w1 * r[j]
                        grads[i, t, m + j] = w1 * r[j]
            if not (math.isfinite(s[0]) and math.isfinite(s[1]) and math.isfinite(s[2]) and math.isfinite(s[3])):
                failed[i] = True
                break
            if abs(s[0]) > POSITION_LIMIT or abs(s[2]) > ANGLE_LIMIT:
                failed[i] = True
                break
        if record:
            for t in range(lengths[i] + 1, T + 1):
                states[i, t, :] = s
    return lengths, failed, states, actions, outcomes, grads


@dataclass(frozen=True, eq=False)
class CartPoleEnv:
    delta: float = 0.0
    noise_var: float = 1e-4
    gamma: float = 0.99
    reset_range: float = 0.05
    feature_scales: tuple[float, float, float, float] = (2.4, 2.0, 0.4, 3.0)
    delta_low: float = -math.inf
    delta_high: float = math.inf

    n_actions = 2

    def __post_init__(self) -> None:
        if self.noise_var < 0:
            raise ValueError("noise variance must be nonnegative")
        if not self.delta_low <= self.delta <= self.delta_high:
            raise ValueError("delta outside its configured uncertainty bound")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")

    @property
    def centers(self) -> np.ndarray:
        return lattice_centers(self.feature_scales)

    @property
    def n_policy_features(self) -> int:
        return 2 * (self.centers.shape[0] + 1)

    def reset(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(-self.reset_range, self.reset_range, size=(n, 4))

    def rbf(self, states: np.ndarray) -> np.ndarray:
        u = np.asarray(states, dtype=float).reshape(-1, 4) / np.asarray(self.feature_scales)
        c = self.centers / np.asarray(self.feature_scales)
        # |u - c|^2 expanded so the 16 distances come from one matrix product
        sq = (u * u).sum(axis=1, keepdims=True) - 2.0 * u @ c.T + (c * c).sum(axis=1)
        out = np.empty((u.shape[0], c.shape[0] + 1))
        out[:, 0] = 1.0
        np.exp(-0.5 * sq, out=out[:, 1:])
        return out

    def features(self, states: np.ndarray) -> np.ndarray:
        r = self.rbf(states)
        m = r.shape[1]
        f = np.zeros((r.shape[0], 2, 2 * m))
        f[:, 0, :m] = r
        f[:, 1, m:] = r
        return f

    def failed(self, states: np.ndarray) -> np.ndarray:
        return (np.abs(states[..., 0]) > POSITION_LIMIT) | (np.abs(states[..., 2]) > ANGLE_LIMIT)

    def step(self, states, actions, xi, rng):
        delta = self.delta if xi is None else float(np.asarray(xi).reshape(-1)[0])
        s_bar = cartpole_physics(states, actions)
        nxt = (1.0 + delta) * s_bar
        if self.noise_var > 0:
            nxt = nxt + math.sqrt(self.noise_var) * rng.standard_normal(s_bar.shape)
        if not np.all(np.isfinite(nxt)):
            raise FloatingPointError("cart-pole state became non-finite")
        done = self.failed(nxt)
        return nxt, done.astype(float), done, np.concatenate([s_bar, nxt], axis=-1)

    def transition_score(self, xi, states, actions, outcomes):
        """d log N(s'; (1 + delta) s_bar, v I) / d delta = (s' - (1 + delta) s_bar) . s_bar / v."""
        if self.noise_var <= 0:
            raise ValueError("transition score needs a positive noise variance")
        delta = float(np.asarray(xi).reshape(-1)[0])
        s_bar, nxt = outcomes[..., :4], outcomes[..., 4:]
        return (((nxt - (1.0 + delta) * s_bar) * s_bar).sum(axis=-1) / self.noise_var)[:, None]

    def _kernel_args(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        inv = 1.0 / np.asarray(self.feature_scales, dtype=float)
        weights = np.ascontiguousarray(np.asarray(theta, dtype=float).reshape(2, -1))
        return weights, np.ascontiguousarray(self.centers * inv), inv

    def sample_batch(self, theta, xi, n, horizon, rng, keep_policy_grads=False) -> TrajectoryBatch:
        """Compiled equivalent of the generic batch sampler (same batch layout, own draw order)."""
        delta = self.delta if xi is None else float(np.asarray(xi).reshape(-1)[0])
        s0 = self.reset(rng, n)
        weights, centers, inv = self._kernel_args(theta)
        lengths, failed, states, actions, outcomes, grads = _rollout(
            s0, weights, centers, inv, np.full(n, delta), math.sqrt(self.noise_var), horizon, True,
            keep_policy_grads, rng)
        if not np.all(np.isfinite(states)):
            raise FloatingPointError("cart-pole state became non-finite")
        T = int(lengths.max()) if n else 0
        steps = np.arange(T)
        alive = steps[None, :] < lengths[:, None]
        costs = ((steps[None, :] == lengths[:, None] - 1) & failed[:, None]).astype(float)
        return TrajectoryBatch(states[:, :T + 1], actions[:, :T], costs, outcomes[:, :T], alive,
                               grads[:, :T] if keep_policy_grads else None)


def cartpole_step(env: CartPoleEnv, state: np.ndarray, action: int,
                  rng: np.random.Generator) -> tuple[np.ndarray, float, bool]:
    nxt, cost, done, _ = env.step(np.asarray(state, dtype=float)[None, :], np.array([action]), None, rng)
    return nxt[0], float(cost[0]), bool(done[0])


@dataclass(frozen=True)
class LevelResult:
    level: int
    delta_bound: float
    episodes: int
    min_steps: int
    max_steps: int
    mean_steps: float
    success_rate: float


def run_episodes(env: CartPoleEnv, theta: np.ndarray, deltas: np.ndarray, max_steps: int,
                 rng: np.random.Generator) -> np.ndarray:
    """Steps survived per episode (capped at max_steps), one delta per episode, actions sampled from the policy."""
    s0 = env.reset(rng, deltas.size)
    weights, centers, inv = env._kernel_args(theta)
    lengths, failed, *_ = _rollout(s0, weights, centers, inv, np.asarray(deltas, dtype=float),
                                   math.sqrt(env.noise_var), max_steps, False, False, rng)
    return lengths - failed


def cartpole_robustness_eval(env: CartPoleEnv, theta: np.ndarray, levels: list[int], delta_unit: float,
                             episodes: int, max_steps: int, rng: np.random.Generator) -> list[LevelResult]:
    """Success table: at level k each episode draws delta ~ U[0, k delta_unit]."""
    out = []
    for k in levels:
        bound = k * delta_unit
        if episodes == 0:
            continue
        deltas = rng.uniform(0.0, bound, size=episodes)
        steps = run_episodes(env, theta, deltas, max_steps, rng)
        out.append(LevelResult(k, bound, episodes, int(steps.min()), int(steps.max()), float(steps.mean()),
                               float(np.mean(steps >= max_steps))))
    return out
