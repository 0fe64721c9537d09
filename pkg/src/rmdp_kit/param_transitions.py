"""Parametric transition kernels, their score functions and projected ascent over parameters.

Two families are provided:

* the entropy kernel, a tilt of a nominal kernel
  ``p[s,a,s'] ~ pbar[s,a,s'] exp(eta . phi(s') / lam . zeta(s,a))``, which is the
  shape of the worst case under KL-constrained (s,a)-rectangular sets;
* a Gaussian mixture ``sum_m w_m N(eta_m . zeta(s,a), sigma_m^2)`` for scalar
  continuous outcomes.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .ambiguity import _solve_increasing
from .core_mdp import TabularMdp, action_next_state_values, occupancy, policy_evaluate

LAMBDA_MIN = 1e-6
LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


# ---------------------------------------------------------------------------
# features

@dataclass(frozen=True, eq=False)
class RadialFeatures:
    """zeta_i(s, a) = exp(-((s - cs_i)^2 + (a - ca_i)^2) / (2 w_i^2))."""

    center_s: np.ndarray
    center_a: np.ndarray
    width: np.ndarray

    def __post_init__(self) -> None:
        cs, ca, w = (np.asarray(x, dtype=float).reshape(-1) for x in (self.center_s, self.center_a, self.width))
        if not cs.shape == ca.shape == w.shape:
            raise ValueError("centers and widths must have equal length")
        if np.any(w <= 0):
            raise ValueError("radial widths must be positive")
        object.__setattr__(self, "center_s", cs)
        object.__setattr__(self, "center_a", ca)
        object.__setattr__(self, "width", w)

    @property
    def dim(self) -> int:
        return self.width.size

    def __call__(self, s: np.ndarray, a: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)[..., None]
        a = np.asarray(a, dtype=float)[..., None]
        return np.exp(-((s - self.center_s) ** 2 + (a - self.center_a) ** 2) / (2.0 * self.width ** 2))


# ---------------------------------------------------------------------------
# entropy kernel

@dataclass(frozen=True, eq=False)
class EntropyTransition:
    nominal: np.ndarray   # (S, A, S)
    phi: np.ndarray       # (S, l) next-state features
    zeta: np.ndarray      # (S, A, n) state-action features
    eta: np.ndarray       # (l,)
    lam: np.ndarray       # (n,)

    def __post_init__(self) -> None:
        for name in ("nominal", "phi", "zeta", "eta", "lam"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        S, A, S2 = self.nominal.shape
        if S != S2 or self.phi.shape != (S, self.eta.size) or self.zeta.shape != (S, A, self.lam.size):
            raise ValueError("inconsistent entropy-kernel shapes")
        if np.min(np.abs(self.temperature())) < LAMBDA_MIN:
            raise ValueError("lam . zeta(s, a) must stay at least 1e-6 away from zero")

    @property
    def n_params(self) -> int:
        return self.eta.size + self.lam.size

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([self.eta, self.lam])

    def with_params(self, xi: np.ndarray) -> "EntropyTransition":
        xi = np.asarray(xi, dtype=float)
        return replace(self, eta=xi[: self.eta.size], lam=xi[self.eta.size:])

    def temperature(self) -> np.ndarray:
        """L[s, a] = lam . zeta(s, a)."""
        return self.zeta @ self.lam

    def log_kernel(self) -> np.ndarray:
        u = self.phi @ self.eta
        with np.errstate(divide="ignore"):
            logits = np.log(self.nominal) + u[None, None, :] / self.temperature()[:, :, None]
        logits -= logits.max(axis=-1, keepdims=True)
        return logits - np.log(np.exp(logits).sum(axis=-1, keepdims=True))

    def kernel(self) -> np.ndarray:
        return np.exp(self.log_kernel())

    def eval(self, s: int, a: int) -> np.ndarray:
        return self.kernel()[s, a]

    def scores(self) -> np.ndarray:
        """d log p[s,a,s'] / d(eta, lam), shape (S, A, S, l + n)."""
        p = self.kernel()
        L = self.temperature()
        u = self.phi @ self.eta
        mean_phi = np.einsum("sat,tl->sal", p, self.phi)
        d_eta = (self.phi[None, None, :, :] - mean_phi[:, :, None, :]) / L[:, :, None, None]
        mean_u = p @ u
        d_lam = ((mean_u[:, :, None] - u[None, None, :]) / L[:, :, None] ** 2)[..., None] * self.zeta[:, :, None, :]
        return np.concatenate([d_eta, d_lam], axis=-1)

    def score(self, s: int, a: int, s_next: int) -> np.ndarray:
        return self.scores()[s, a, s_next]

    def kernel_jacobian(self) -> np.ndarray:
        """d p[s,a,s'] / d xi = p * score."""
        return self.kernel()[..., None] * self.scores()


def entropy_eval(tr: EntropyTransition, s: int, a: int) -> np.ndarray:
    return tr.eval(s, a)


def entropy_score(tr: EntropyTransition, s: int, a: int, s_next: int) -> np.ndarray:
    return tr.score(s, a, s_next)


def transition_grad_parametric(mdp: TabularMdp, pi: np.ndarray, tr: EntropyTransition) -> np.ndarray:
    """dJ/dxi = 1/(1-gamma) E_{s~d, a~pi, s'~p}[d log p / d xi (c + gamma v(s'))]."""
    p = tr.kernel()
    v = policy_evaluate(mdp, pi, p)
    d = occupancy(mdp, pi, p)
    g = action_next_state_values(mdp, v)
    weight = (d[:, None] * pi)[:, :, None] * p * g
    return np.einsum("sat,satk->k", weight, np.nan_to_num(tr.scores())) / (1.0 - mdp.gamma)


def transition_grad_chain(mdp: TabularMdp, pi: np.ndarray, p: np.ndarray, jac: np.ndarray) -> np.ndarray:
    """dJ/dxi through an arbitrary kernel Jacobian jac[s,a,s',k] = dp[s,a,s']/dxi_k."""
    v = policy_evaluate(mdp, pi, p)
    d = occupancy(mdp, pi, p)
    g = action_next_state_values(mdp, v)
    weight = (d[:, None] * pi)[:, :, None] * g
    return np.einsum("sat,satk->k", weight, jac) / (1.0 - mdp.gamma)


# ---------------------------------------------------------------------------
# Gaussian mixture

@dataclass(frozen=True, eq=False)
class GaussianMixtureTransition:
    """Scalar outcome x ~ sum_m w_m N(eta_m . zeta, sigma_m^2) given features zeta."""

    weights: np.ndarray  # (M,)
    etas: np.ndarray     # (M, n)
    sigmas: np.ndarray   # (M,)

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        etas = np.atleast_2d(np.asarray(self.etas, dtype=float))
        sig = np.asarray(self.sigmas, dtype=float).reshape(-1)
        if not w.size == etas.shape[0] == sig.size:
            raise ValueError("mixture component counts disagree")
        if np.any(sig <= 0):
            raise ValueError("component standard deviations must be positive")
        if np.any(w < 0):
            raise ValueError("mixture weights must be nonnegative")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "etas", etas)
        object.__setattr__(self, "sigmas", sig)

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def n_params(self) -> int:
        return self.weights.size + self.etas.size

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([self.weights, self.etas.reshape(-1)])

    def with_params(self, xi: np.ndarray) -> "GaussianMixtureTransition":
        xi = np.asarray(xi, dtype=float)
        M = self.n_components
        return replace(self, weights=xi[:M], etas=xi[M:].reshape(self.etas.shape))

    def means(self, zeta: np.ndarray) -> np.ndarray:
        """Component means, shape (..., M)."""
        return np.asarray(zeta, dtype=float) @ self.etas.T

    def _component_logpdf(self, zeta: np.ndarray, x: np.ndarray) -> np.ndarray:
        z = (np.asarray(x, dtype=float)[..., None] - self.means(zeta)) / self.sigmas
        return -0.5 * z ** 2 - np.log(self.sigmas) - LOG_SQRT_2PI

    def logpdf(self, zeta: np.ndarray, x: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return logsumexp(np.log(self.weights) + self._component_logpdf(zeta, x), axis=-1)

    def score(self, zeta: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(log density, d log density / d(weights, etas)) with ravelled etas.

        d/dw_m = N_m / p and d/deta_m = w_m N_m / p (x - mu_m) zeta / sigma_m^2.
        Where the density underflows the score is zero and the log density is -inf.
        """
        zeta = np.asarray(zeta, dtype=float)
        x = np.asarray(x, dtype=float)
        comp = self._component_logpdf(zeta, x)
        with np.errstate(divide="ignore"):
            logp = logsumexp(np.log(self.weights) + comp, axis=-1)
        finite = np.isfinite(logp)
        safe_logp = np.where(finite, logp, 0.0)
        ratio = np.where(finite[..., None], np.exp(comp - safe_logp[..., None]), 0.0)  # N_m / p
        resid = (x[..., None] - self.means(zeta)) / self.sigmas ** 2
        d_eta = (self.weights * ratio * resid)[..., :, None] * zeta[..., None, :]
        d_eta = d_eta.reshape(*d_eta.shape[:-2], -1)
        return logp, np.concatenate([ratio, d_eta], axis=-1)

    def sample(self, zeta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        zeta = np.asarray(zeta, dtype=float)
        shape = zeta.shape[:-1]
        u = rng.random(shape)
        comp = np.minimum(np.searchsorted(np.cumsum(self.weights) / self.weights.sum(), u, side="right"),
                          self.n_components - 1)
        mu = np.take_along_axis(self.means(zeta), comp[..., None], -1)[..., 0]
        return mu + self.sigmas[comp] * rng.standard_normal(shape)


def gm_logdensity(tr: GaussianMixtureTransition, zeta: np.ndarray, x: float) -> tuple[float, np.ndarray]:
    logp, g = tr.score(np.asarray(zeta, dtype=float), np.asarray(x, dtype=float))
    return float(logp), g


# ---------------------------------------------------------------------------
# parameter sets

def project_l1_ball(x: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection onto {z : ||z - center||_1 <= radius}."""
    d = np.asarray(x, dtype=float) - center
    a = np.abs(d)
    if a.sum() <= radius:
        return np.array(x, dtype=float)
    if radius <= 0:
        return np.array(center, dtype=float)
    u = np.sort(a)[::-1]
    css = np.cumsum(u) - radius
    k = np.arange(1, u.size + 1)
    r = np.nonzero(u - css / k >= 0)[0][-1]
    tau = css[r] / (r + 1)
    return center + np.sign(d) * np.maximum(a - tau, 0.0)


@dataclass(frozen=True, eq=False)
class BallSet:
    """{z : ||z - center|| <= radius} in the L1 or L-infinity norm; coordinates outside ``free`` stay at center."""

    center: np.ndarray
    radius: float
    norm: str = "l1"
    free: np.ndarray | None = None

    def __post_init__(self) -> None:
        c = np.asarray(self.center, dtype=float).reshape(-1)
        if self.radius < 0:
            raise ValueError("radius must be nonnegative")
        if self.norm not in ("l1", "linf"):
            raise ValueError(f"unknown norm {self.norm!r}")
        free = np.ones(c.size, bool) if self.free is None else np.asarray(self.free, bool).reshape(-1)
        if free.shape != c.shape:
            raise ValueError("free mask must match the center")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "free", free)

    @property
    def size(self) -> int:
        return self.center.size

    def project(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = self.center.copy()
        f = self.free
        if self.norm == "l1":
            out[f] = project_l1_ball(x[f], self.center[f], self.radius)
        else:
            out[f] = np.clip(x[f], self.center[f] - self.radius, self.center[f] + self.radius)
        return out

    def contains(self, x: np.ndarray, tol: float = 1e-9) -> bool:
        d = np.asarray(x, dtype=float) - self.center
        if np.any(np.abs(d[~self.free]) > tol):
            return False
        dist = np.abs(d).sum() if self.norm == "l1" else np.abs(d).max(initial=0.0)
        return bool(dist <= self.radius + tol)


@dataclass(frozen=True, eq=False)
class BoxSimplex:
    """{w in simplex : lower <= w <= upper}."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        lo = np.asarray(self.lower, dtype=float).reshape(-1)
        hi = np.asarray(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape or np.any(lo > hi) or np.any(lo < 0):
            raise ValueError("need 0 <= lower <= upper elementwise")
        if lo.sum() > 1 + 1e-12 or hi.sum() < 1 - 1e-12:
            raise ValueError("box bounds exclude the simplex")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def size(self) -> int:
        return self.lower.size

    def project(self, x: np.ndarray) -> np.ndarray:
        """Solve sum_i clip(x_i - tau, lo_i, hi_i) = 1 for tau on its sorted breakpoints."""
        x = np.asarray(x, dtype=float)
        bps = np.sort(np.concatenate([x - self.upper, x - self.lower]))
        # F(tau) = -sum clip(x - tau, lo, hi) is nondecreasing in tau
        f = -np.clip(x[None, :] - bps[:, None], self.lower, self.upper).sum(axis=1)
        tau = _solve_increasing(bps[None, :], f[None, :], np.array([-1.0]))[0]
        return np.clip(x - tau, self.lower, self.upper)

    def contains(self, x: np.ndarray, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(abs(x.sum() - 1) <= tol and np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))


@dataclass(frozen=True, eq=False)
class ProductSet:
    """Cartesian product of blocks laid out consecutively in the parameter vector."""

    blocks: Sequence[BallSet | BoxSimplex] = field(default_factory=tuple)

    @property
    def size(self) -> int:
        return sum(b.size for b in self.blocks)

    def _split(self, x: np.ndarray) -> list[np.ndarray]:
        x = np.asarray(x, dtype=float)
        if x.size != self.size:
            raise ValueError(f"parameter vector has {x.size} entries, set expects {self.size}")
        return np.split(x, np.cumsum([b.size for b in self.blocks])[:-1])

    def project(self, x: np.ndarray) -> np.ndarray:
        return np.concatenate([b.project(part) for b, part in zip(self.blocks, self._split(x))])

    def contains(self, x: np.ndarray, tol: float = 1e-9) -> bool:
        return all(b.contains(part, tol) for b, part in zip(self.blocks, self._split(x)))


XiSet = BallSet | BoxSimplex | ProductSet


# ---------------------------------------------------------------------------
# generalized transition mirror ascent

@dataclass
class AscentResult:
    xi: np.ndarray
    J: float
    trace: list[tuple[int, float, float]]


def generalized_tma(objective: Callable[[np.ndarray], tuple[float, np.ndarray]], xi0: np.ndarray,
                    xi_set: XiSet, beta0: float, n_iters: int, ratio: float = 1.0) -> AscentResult:
    """Projected (squared Euclidean) gradient ascent on J(pi, p^xi) over xi in the set.

    ``objective(xi)`` returns (J, dJ/dxi). The step at iteration t is beta0 * ratio**t.
    The best iterate is returned; the trace rows are (iter, J, beta).
    """
    xi = xi_set.project(np.asarray(xi0, dtype=float))
    best_xi, best_J = xi, -np.inf
    trace: list[tuple[int, float, float]] = []
    for t in range(n_iters + 1):
        J, grad = objective(xi)
        beta = beta0 * ratio ** t
        trace.append((t, J, beta))
        if J > best_J:
            best_xi, best_J = xi, J
        if t == n_iters:
            break
        xi = xi_set.project(xi + beta * grad)
    return AscentResult(best_xi, best_J, trace)


def entropy_objective(mdp: TabularMdp, pi: np.ndarray, tr: EntropyTransition) -> Callable[[np.ndarray], tuple[float, np.ndarray]]:
    def f(xi: np.ndarray) -> tuple[float, np.ndarray]:
        t = tr.with_params(xi)
        return float(mdp.rho @ policy_evaluate(mdp, pi, t.kernel())), transition_grad_parametric(mdp, pi, t)
    return f
