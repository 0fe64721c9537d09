"""Double-loop robust policy mirror descent.

Each outer iteration solves the inner worst-case problem for the current policy to
a certified tolerance eps_t, then takes one mirror-descent (direct policies) or
gradient (softmax policies) step against the worst kernel found. Tolerances
shrink geometrically and the best iterate is returned.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np

from .ambiguity import AmbiguitySet, project_simplex, prox_kl_simplex
from .core_mdp import TabularMdp, grad_softmax, q_values, softmax_policy
from .inner_solvers import InnerConfig, robust_objective, tma_solve

KL_FLOOR = np.finfo(float).tiny


# ---------------------------------------------------------------------------
# parameterizations

@dataclass(frozen=True)
class Direct:
    geometry: str = "se"

    def __post_init__(self) -> None:
        if self.geometry not in ("se", "kl"):
            raise ValueError(f"unknown geometry {self.geometry!r}")


@dataclass(frozen=True)
class SoftmaxTabular:
    pass


@dataclass(frozen=True, eq=False)
class SoftmaxLinear:
    """Logits theta[s, a] = features[s, a] . w."""

    features: np.ndarray


Parameterization = Union[Direct, SoftmaxTabular, SoftmaxLinear]


# ---------------------------------------------------------------------------
# step-size schedules

@dataclass(frozen=True)
class SublinearGeometric:
    """alpha_t = alpha0 (M / (1 - gamma))^t."""

    alpha0: float
    mismatch: float


@dataclass(frozen=True)
class LinearSRect:
    """alpha_t = alpha0 r^t with r = M / (1 - gamma) / (1 - (1 - gamma)^2 / M)."""

    alpha0: float
    mismatch: float


@dataclass(frozen=True)
class LinearSaRect:
    """alpha_t = alpha0 r^t with r = M / (1 - gamma) / (1 - (1 - gamma) / M)."""

    alpha0: float
    mismatch: float


@dataclass(frozen=True)
class SoftmaxConstant:
    """alpha = 1 / l_theta with smoothness constant l_theta = 8 / (1 - gamma)^3."""


StepSchedule = Union[SublinearGeometric, LinearSRect, LinearSaRect, SoftmaxConstant]


def softmax_smoothness(gamma: float) -> float:
    return 8.0 / (1.0 - gamma) ** 3


def softmax_lipschitz(gamma: float) -> float:
    return math.sqrt(2.0) / (1.0 - gamma) ** 2


def step_ratio(schedule: StepSchedule, gamma: float) -> float:
    if isinstance(schedule, SoftmaxConstant):
        return 1.0
    m = schedule.mismatch
    base = m / (1.0 - gamma)
    if isinstance(schedule, SublinearGeometric):
        return base
    if isinstance(schedule, LinearSRect):
        return base / (1.0 - (1.0 - gamma) ** 2 / m)
    return base / (1.0 - (1.0 - gamma) / m)


def step_size(schedule: StepSchedule, gamma: float, t: int, alpha_max: float = math.inf) -> float:
    if isinstance(schedule, SoftmaxConstant):
        return 1.0 / softmax_smoothness(gamma)
    log_alpha = math.log(schedule.alpha0) + t * math.log(step_ratio(schedule, gamma))
    return min(math.exp(min(log_alpha, 700.0)), alpha_max)


def default_alpha0(gamma: float, geometry: str, n_actions: int) -> float:
    """(1 - gamma) for squared Euclidean, (1 - gamma) log A for KL."""
    if geometry == "kl":
        return (1.0 - gamma) * math.log(max(n_actions, 2))
    return 1.0 - gamma


def default_mismatch(rho: np.ndarray) -> float:
    """Conservative stand-in for the distribution mismatch coefficient: 1 / min_s rho_s."""
    return 1.0 / float(np.min(rho))


@dataclass(frozen=True)
class OuterConfig:
    parameterization: Parameterization = Direct()
    step_schedule: StepSchedule | None = None
    eps0: float = 1.0
    decay: float | None = None
    max_outer: int = 200
    term_tol: float = 1e-5
    alpha_max: float = 1e8
    eps_min: float = 1e-10
    inner: InnerConfig = InnerConfig()

    def resolved(self, mdp: TabularMdp) -> "OuterConfig":
        """Fill schedule and decay defaults that depend on the model."""
        cfg = self
        if cfg.decay is None:
            cfg = replace(cfg, decay=mdp.gamma)
        if cfg.step_schedule is None:
            par = cfg.parameterization
            if isinstance(par, Direct):
                sched: StepSchedule = SublinearGeometric(
                    default_alpha0(mdp.gamma, par.geometry, mdp.n_actions), default_mismatch(mdp.rho))
            else:
                sched = SoftmaxConstant()
            cfg = replace(cfg, step_schedule=sched)
        if not (0 < cfg.decay <= mdp.gamma or cfg.decay == 1.0):
            raise ValueError("tolerance decay must lie in (0, gamma], or equal 1 for a fixed tolerance")
        if cfg.eps0 <= 0 or cfg.max_outer < 1:
            raise ValueError("eps0 must be positive and max_outer at least 1")
        if isinstance(cfg.parameterization, Direct) == isinstance(cfg.step_schedule, SoftmaxConstant):
            raise ValueError("softmax parameterizations need SoftmaxConstant; direct ones need a geometric schedule")
        return cfg


@dataclass(frozen=True)
class TraceRow:
    t: int
    J: float
    phi_gap: float | None
    eps: float
    alpha: float
    inner_iters: int
    wall_ns: int


@dataclass
class SolveReport:
    rows: list[TraceRow]
    best_index: int
    policy: np.ndarray
    kernel: np.ndarray
    phi: float
    inner_failures: int = 0
    params: np.ndarray | None = None
    censored: bool = False
    total_inner_iters: int = field(init=False)

    def __post_init__(self) -> None:
        self.total_inner_iters = sum(r.inner_iters for r in self.rows)

    @property
    def best_J(self) -> float:
        return self.rows[self.best_index].J


# ---------------------------------------------------------------------------
# updates

def pmd_update_direct(pi_t: np.ndarray, q: np.ndarray, alpha: float, geometry: str = "se") -> np.ndarray:
    """Per-state mirror-descent step on the simplex."""
    if geometry == "se":
        return project_simplex(pi_t - alpha * q)
    if geometry == "kl":
        if np.any(pi_t <= 0):
            raise ValueError("KL policy update needs strictly positive probabilities")
        return prox_kl_simplex(pi_t, q, alpha)
    raise ValueError(f"unknown geometry {geometry!r}")


def pg_update_softmax(theta_t: np.ndarray, grad: np.ndarray, alpha: float) -> np.ndarray:
    grad = np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(grad)):
        raise ValueError("gradient must be finite")
    return np.asarray(theta_t, dtype=float) - alpha * grad


def linear_logits(features: np.ndarray, w: np.ndarray) -> np.ndarray:
    return np.einsum("sak,k->sa", features, w)


# ---------------------------------------------------------------------------
# solver

def drpmd_solve(mdp: TabularMdp, amb: AmbiguitySet, config: OuterConfig = OuterConfig(),
                phi_star: float | None = None, deadline_s: float | None = None) -> SolveReport:
    """Run the double loop; ``deadline_s`` caps wall time and marks the report censored when hit."""
    cfg = config.resolved(mdp)
    par = cfg.parameterization
    S, A = mdp.n_states, mdp.n_actions

    if isinstance(par, Direct):
        params = np.full((S, A), 1.0 / A)
    elif isinstance(par, SoftmaxTabular):
        params = np.zeros((S, A))
    else:
        params = np.zeros(par.features.shape[-1])

    def policy_of(x: np.ndarray) -> np.ndarray:
        if isinstance(par, Direct):
            return x
        if isinstance(par, SoftmaxTabular):
            return softmax_policy(x)
        return softmax_policy(linear_logits(par.features, x))

    rows: list[TraceRow] = []
    upper: list[float] = []  # certified bounds J_t + residual_t >= Phi(pi_t)
    history: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
    eps = cfg.eps0
    kernel = np.array(amb.nominal, dtype=float)
    failures = 0
    best = 0
    censored = False
    clock0 = time.perf_counter()
    for t in range(cfg.max_outer):
        start = time.perf_counter_ns()
        pi = policy_of(params)
        inner = tma_solve(mdp, pi, amb, replace(cfg.inner, residual_tol=eps), p0=kernel)
        failures += not inner.converged
        kernel = inner.kernel
        alpha = step_size(cfg.step_schedule, mdp.gamma, t, cfg.alpha_max)
        history.append((params.copy(), pi, kernel))
        if isinstance(par, Direct):
            new_params = pmd_update_direct(pi, q_values(mdp, pi, kernel), alpha, par.geometry)
            if par.geometry == "kl":
                new_params = np.maximum(new_params, KL_FLOOR)
                new_params /= new_params.sum(axis=1, keepdims=True)
        elif isinstance(par, SoftmaxTabular):
            new_params = pg_update_softmax(params, grad_softmax(mdp, params, kernel), alpha)
        else:
                logits = linear_logits(par.features, params)
                g_logits = grad_softmax(mdp, logits, kernel)
                new_params = pg_update_softmax(params, np.einsum("sa,sak->k", g_logits, par.features), alpha)
        wall = time.perf_counter_ns() - start
        gap = None if phi_star is None else inner.J - phi_star
        rows.append(TraceRow(t, inner.J, gap, eps, alpha, inner.iters, wall))
        upper.append(inner.J + inner.residual)
        if upper[t] < upper[best]:
            best = t
        # a J-change below term_tol only counts once the inner solve is that accurate
        if t > 0 and abs(inner.J - rows[t - 1].J) <= cfg.term_tol and inner.residual <= cfg.term_tol:
            break
        if deadline_s is not None and time.perf_counter() - clock0 > deadline_s:
            censored = True
            break
        params = new_params
        eps = max(cfg.decay * eps, cfg.eps_min)

    best_params, best_pi, best_kernel = history[best]
    return SolveReport(
        rows=rows,
        best_index=best,
        policy=best_pi,
        kernel=best_kernel,
        phi=robust_objective(mdp, best_pi, amb),
        inner_failures=failures,
        params=best_params,
        censored=censored,
    )
