"""L1 rectangular ambiguity sets: membership, linear maximisation and proximal steps.

Two rectangularities are supported. The (s,a)-rectangular set bounds each row
``||p[s,a] - p_c[s,a]||_1 <= kappa[s,a]``; the s-rectangular set bounds the sum over
actions ``sum_a ||p[s,a] - p_c[s,a]||_1 <= kappa[s]``.

Proximal steps use squared Euclidean geometry. They are exact Euclidean
projections of ``base + beta * g`` onto the feasible region, found by solving the
piecewise-linear KKT equations on sorted breakpoints.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Union

import numpy as np

from .core_mdp import check_kernel

FEAS_TOL = 1e-9
BISECT_RTOL = 1e-12
BISECT_MAXITER = 200


class ProxConvergenceError(RuntimeError):
    """Raised when the budget-multiplier bisection fails to bracket a root."""


# ---------------------------------------------------------------------------
# piecewise-linear root finding

def _solve_increasing(bps: np.ndarray, f: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Row-wise x with F(x) = t, given F sampled at sorted breakpoints.

    F is nondecreasing and linear between consecutive breakpoints, and
    f[:, 0] <= t <= f[:, -1] must hold.
    """
    m = bps.shape[1]
    k = np.sum(f < t[:, None], axis=1)
    k = np.clip(k, 1, m - 1)
    x0 = np.take_along_axis(bps, (k - 1)[:, None], 1)[:, 0]
    x1 = np.take_along_axis(bps, k[:, None], 1)[:, 0]
    f0 = np.take_along_axis(f, (k - 1)[:, None], 1)[:, 0]
    f1 = np.take_along_axis(f, k[:, None], 1)[:, 0]
    span = f1 - f0
    w = np.where(span > 0, (t - f0) / np.where(span > 0, span, 1.0), 0.0)
    return x0 + np.clip(w, 0.0, 1.0) * (x1 - x0)


def project_simplex(x: np.ndarray) -> np.ndarray:
    """Euclidean projection of each row of ``x`` onto the probability simplex."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] == 0:
        raise ValueError("cannot project an empty vector")
    if not np.all(np.isfinite(x)):
        raise ValueError("projection input must be finite")
    flat = x.reshape(-1, x.shape[-1])
    n = flat.shape[1]
    u = -np.sort(-flat, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    idx = np.arange(1, n + 1)
    cond = u - css / idx > 0
    r = n - np.argmax(cond[:, ::-1], axis=1)
    tau = np.take_along_axis(css, (r - 1)[:, None], 1) / r[:, None]
    return np.maximum(flat - tau, 0.0).reshape(x.shape)


def _project_l1_budget(y: np.ndarray, c: np.ndarray, kappa: np.ndarray) -> np.ndarray:
    """Project rows of y onto {p in simplex : ||p - c||_1 <= kappa}, row-wise."""
    p = project_simplex(y)
    used = np.abs(p - c).sum(axis=1)
    active = used > kappa + 1e-13
    if not np.any(active):
        return p
    ya, ca, ka = y[active], c[active], kappa[active]
    n = ya.shape[1]
    d = ya - ca
    half = ka / 2.0

    # upper threshold a: sum_i (d_i - a)_+ = half, written in x = -a to be increasing
    bx = np.concatenate([-d, (-d.min(axis=1) + half)[:, None]], axis=1)
    bx.sort(axis=1)
    fx = np.maximum(d[:, None, :] + bx[:, :, None], 0.0).sum(axis=2)
    a = -_solve_increasing(bx, fx, half)

    # lower threshold b: sum_i clip(b - d_i, 0, c_i) = half
    bb = np.concatenate([d, d + ca], axis=1)
    bb.sort(axis=1)
    fb = np.clip(bb[:, :, None] - d[:, None, :], 0.0, ca[:, None, :]).sum(axis=2)
    b = _solve_increasing(bb, fb, half)

    pa = ca.copy()
    up = d > a[:, None]
    pa[up] = (ya - a[:, None])[up]
    down = d < b[:, None]
    pa[down] = np.maximum(0.0, ya - b[:, None])[down]
    p[active] = pa
    return p


def _tau_for_mu(d: np.ndarray, c: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Simplex multiplier per row: gains(tau) = losses(tau) at budget multiplier mu.

    d, c have shape (N, n); mu has shape (N,).
    """
    m = mu[:, None]
    bps = np.concatenate([d - m, d + m, d + m + c], axis=1)
    bps.sort(axis=1)
    t = bps[:, :, None]
    gains = np.maximum(d[:, None, :] - t - m[:, :, None], 0.0).sum(axis=2)
    losses = np.clip(t - m[:, :, None] - d[:, None, :], 0.0, c[:, None, :]).sum(axis=2)
    return _solve_increasing(bps, losses - gains, np.zeros(d.shape[0]))


def _soft_rows(y: np.ndarray, c: np.ndarray, tau: np.ndarray, mu: np.ndarray) -> np.ndarray:
    d = y - c
    up = tau[:, None] + mu[:, None]
    lo = tau[:, None] - mu[:, None]
    return np.where(d > up, y - up, np.where(d < lo, np.maximum(0.0, y - lo), c))


def _project_shared_budget(y: np.ndarray, c: np.ndarray, kappa: np.ndarray) -> np.ndarray:
    """Project y of shape (S, A, n) onto prod_s {p_s : rows in simplex, sum_a ||p_sa - c_sa||_1 <= kappa_s}."""
    S, A, n = y.shape
    p = project_simplex(y)
    used = np.abs(p - c).sum(axis=(1, 2))
    active = used > kappa + 1e-13
    if not np.any(active):
        return p
    ya, ca, ka = y[active], c[active], kappa[active]
    k = ya.shape[0]
    d = ya - ca
    rows_d = d.reshape(k * A, n)
    rows_c = ca.reshape(k * A, n)
    rows_y = ya.reshape(k * A, n)

    def budget_used(mu: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        mu_rows = np.repeat(mu, A)
        tau = _tau_for_mu(rows_d, rows_c, mu_rows)
        q = _soft_rows(rows_y, rows_c, tau, mu_rows)
        return np.abs(q - rows_c).sum(axis=1).reshape(k, A).sum(axis=1), q

    lo = np.zeros(k)
    hi = np.abs(d).max(axis=(1, 2)) * 2.0 + 1.0
    used_lo, _ = budget_used(lo)
    used_hi, q_hi = budget_used(hi)
    if np.any(used_hi > ka + FEAS_TOL):
        raise ProxConvergenceError("budget multiplier bracket does not contain a feasible point")
    # budget used is piecewise linear and nonincreasing in mu: secant steps land exactly once the
    # bracket sits on one linear piece; every third step bisects to guarantee progress
    for it in range(BISECT_MAXITER):
        if np.all(hi - lo <= BISECT_RTOL * np.maximum(1.0, hi)):
            break
        drop = used_lo - used_hi
        secant = lo + (used_lo - ka) * (hi - lo) / np.where(drop > 0, drop, 1.0)
        inside = (drop > 0) & (secant > lo) & (secant < hi)
        mid = np.where(inside & (it % 3 != 2), secant, 0.5 * (lo + hi))
        used_mid, _ = budget_used(mid)
        hit = np.abs(used_mid - ka) <= BISECT_RTOL * np.maximum(1.0, ka)
        feasible = used_mid <= ka
        hi = np.where(feasible | hit, mid, hi)
        used_hi = np.where(feasible | hit, used_mid, used_hi)
        lo = np.where(hit, mid, np.where(feasible, lo, mid))
        used_lo = np.where(hit, used_mid, np.where(feasible, used_lo, used_mid))
    _, q_hi = budget_used(hi)
    p[active] = q_hi.reshape(k, A, n)
    return p


def _linmax_rows(c: np.ndarray, z: np.ndarray, budget: np.ndarray) -> np.ndarray:
    """Greedy maximiser of p.z over {p in simplex : ||p - c||_1 <= budget} for each row.

    Mass up to budget/2 moves to the lowest-index argmax of z, taken from the
    other states in ascending z order (stable, so lower indices first on ties).
    """
    N, n = c.shape
    target = np.argmax(z, axis=1)
    order = np.argsort(z, axis=1, kind="stable")
    avail = np.take_along_axis(c, order, 1).copy()
    avail[order == target[:, None]] = 0.0
    move = np.minimum(budget / 2.0, avail.sum(axis=1))
    before = np.cumsum(avail, axis=1) - avail
    taken = np.clip(move[:, None] - before, 0.0, avail)
    p = c.copy()
    np.put_along_axis(p, order, np.take_along_axis(p, order, 1) - taken, 1)
    p[np.arange(N), target] += taken.sum(axis=1)
    return np.maximum(p, 0.0)


def _linmax_state(c: np.ndarray, z: np.ndarray, w: np.ndarray, budget: float) -> np.ndarray:
    """Greedy maximiser of sum_a w_a p_a.z_a under a shared L1 budget, for one state.

    Candidate transfers (action, donor) are ranked by w_a (max z_a - z_a,donor);
    each unit of moved mass consumes two units of budget.
    """
    A, n = c.shape
    target = np.argmax(z, axis=1)
    order = np.argsort(z, axis=1, kind="stable")
    acts = np.repeat(np.arange(A), n)
    donors = order.reshape(-1)
    cap = c[acts, donors].copy()
    cap[donors == target[acts]] = 0.0
    gain = w[acts] * (z[acts, target[acts]] - z[acts, donors])
    keep = (cap > 0) & (gain > 0)
    acts, donors, cap, gain = acts[keep], donors[keep], cap[keep], gain[keep]
    rank = np.argsort(-gain, kind="stable")
    acts, donors, cap = acts[rank], donors[rank], cap[rank]
    before = np.cumsum(cap) - cap
    taken = np.clip(budget / 2.0 - before, 0.0, cap)
    p = c.copy()
    np.add.at(p, (acts, donors), -taken)
    np.add.at(p, (acts, target[acts]), taken)
    return np.maximum(p, 0.0)


# ---------------------------------------------------------------------------
# sets

@dataclass(frozen=True, eq=False)
class SaRectL1Set:
    """Rows p[s, a] within L1 distance kappa[s, a] of the nominal row."""

    nominal: np.ndarray
    kappa: np.ndarray

    def __post_init__(self) -> None:
        nominal = check_kernel(self.nominal, square=False)
        kappa = np.asarray(self.kappa, dtype=float)
        if kappa.shape != nominal.shape[:2]:
            raise ValueError(f"kappa must have shape {nominal.shape[:2]}, got {kappa.shape}")
        if np.any(~np.isfinite(kappa)) or np.any(kappa < 0) or np.any(kappa > 2):
            raise ValueError("each kappa[s, a] must lie in [0, 2]")
        for name, arr in (("nominal", nominal), ("kappa", kappa)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    kind = "sa_l1"

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.nominal.shape

    def distances(self, p: np.ndarray) -> np.ndarray:
        return np.abs(np.asarray(p) - self.nominal).sum(axis=-1)

    def contains(self, p: np.ndarray, tol: float = FEAS_TOL) -> bool:
        p = np.asarray(p, dtype=float)
        if p.shape != self.shape or np.any(p < -tol):
            return False
        if np.max(np.abs(p.sum(axis=-1) - 1.0)) > tol:
            return False
        return bool(np.all(self.distances(p) <= self.kappa + tol))

    def linmax(self, z: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
        """Kernel maximising p[s,a].z[s,a] in every cell; weights are irrelevant here."""
        S, A, n = self.shape
        z = np.asarray(z, dtype=float).reshape(S * A, n)
        p = _linmax_rows(self.nominal.reshape(S * A, n), z, self.kappa.reshape(-1))
        return p.reshape(S, A, n)

    def prox(self, base: np.ndarray, g: np.ndarray, beta: float) -> np.ndarray:
        """argmax_p beta <g, p> - 1/2 ||p - base||^2 over the set, all cells at once."""
        S, A, n = self.shape
        y = (np.asarray(base, dtype=float) + beta * np.asarray(g, dtype=float)).reshape(S * A, n)
        p = _project_l1_budget(y, self.nominal.reshape(S * A, n), self.kappa.reshape(-1))
        return p.reshape(S, A, n)

    def to_dict(self) -> dict[str, Any]:
        return {"type": self.kind, "kappa": self.kappa.tolist()}


@dataclass(frozen=True, eq=False)
class SRectL1Set:
    """Kernels with sum_a ||p[s, a] - nominal[s, a]||_1 <= kappa[s] for every state."""

    nominal: np.ndarray
    kappa: np.ndarray

    def __post_init__(self) -> None:
        nominal = check_kernel(self.nominal, square=False)
        kappa = np.asarray(self.kappa, dtype=float)
        S, A = nominal.shape[:2]
        if kappa.shape != (S,):
            raise ValueError(f"kappa must have shape ({S},), got {kappa.shape}")
        if np.any(~np.isfinite(kappa)) or np.any(kappa < 0) or np.any(kappa > 2 * A):
            raise ValueError(f"each kappa[s] must lie in [0, {2 * A}]")
        for name, arr in (("nominal", nominal), ("kappa", kappa)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    kind = "s_l1"

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.nominal.shape

    def distances(self, p: np.ndarray) -> np.ndarray:
        return np.abs(np.asarray(p) - self.nominal).sum(axis=(-2, -1))

    def contains(self, p: np.ndarray, tol: float = FEAS_TOL) -> bool:
        p = np.asarray(p, dtype=float)
        if p.shape != self.shape or np.any(p < -tol):
            return False
        if np.max(np.abs(p.sum(axis=-1) - 1.0)) > tol:
            return False
        return bool(np.all(self.distances(p) <= self.kappa + tol))

    def linmax(self, z: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """Kernel maximising sum_a weights[s,a] p[s,a].z[s,a] in every state."""
        z = np.asarray(z, dtype=float)
        w = np.asarray(weights, dtype=float)
        return np.stack([_linmax_state(self.nominal[s], z[s], w[s], self.kappa[s])
                         for s in range(self.shape[0])])

    def prox(self, base: np.ndarray, g: np.ndarray, beta: float) -> np.ndarray:
        """argmax_p beta <g, p> - 1/2 ||p - base||^2 over the set; g should already carry policy weights."""
        y = np.asarray(base, dtype=float) + beta * np.asarray(g, dtype=float)
        return _project_shared_budget(y, self.nominal, self.kappa)

    def to_dict(self) -> dict[str, Any]:
        return {"type": self.kind, "kappa": self.kappa.tolist()}


AmbiguitySet = Union[SaRectL1Set, SRectL1Set]


def ambiguity_from_dict(data: dict[str, Any], nominal: np.ndarray) -> AmbiguitySet:
    kind = data.get("type")
    if kind == "sa_l1":
        return SaRectL1Set(nominal, np.array(data["kappa"], dtype=float))
    if kind == "s_l1":
        return SRectL1Set(nominal, np.array(data["kappa"], dtype=float))
    raise ValueError(f"unknown ambiguity type {kind!r}")


# ---------------------------------------------------------------------------
# per-cell entry points

def linmax_sa(amb: SaRectL1Set, s: int, a: int, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)[None, :]
    return _linmax_rows(amb.nominal[s, a][None, :], z, amb.kappa[s, a][None])[0]


def linmax_s(amb: SRectL1Set, s: int, z: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return _linmax_state(amb.nominal[s], np.asarray(z, dtype=float),
                         np.asarray(weights, dtype=float), float(amb.kappa[s]))


def prox_se_sa(amb: SaRectL1Set, s: int, a: int, base: np.ndarray, g: np.ndarray, beta: float) -> np.ndarray:
    y = (np.asarray(base, dtype=float) + beta * np.asarray(g, dtype=float))[None, :]
    return _project_l1_budget(y, amb.nominal[s, a][None, :], amb.kappa[s, a][None])[0]


def prox_se_s(amb: SRectL1Set, s: int, base: np.ndarray, g: np.ndarray, beta: float) -> np.ndarray:
    y = (np.asarray(base, dtype=float) + beta * np.asarray(g, dtype=float))[None]
    return _project_shared_budget(y, amb.nominal[s][None], amb.kappa[s][None])[0]


def prox_kl_simplex(base: np.ndarray, g: np.ndarray, beta: float) -> np.ndarray:
    """Multiplicative-weights step p ~ base * exp(-beta g), normalised in the log domain."""
    base = np.asarray(base, dtype=float)
    if np.any(base <= 0):
        raise ValueError("KL prox needs a strictly positive base distribution")
    logits = np.log(base) - beta * np.asarray(g, dtype=float)
    logits -= logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    p = e / e.sum(axis=-1, keepdims=True)
    return np.maximum(p, np.finfo(float).tiny)
