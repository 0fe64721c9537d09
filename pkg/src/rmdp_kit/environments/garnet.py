"""Random sparse Garnet MDPs with L1 ambiguity radii."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..ambiguity import SaRectL1Set, SRectL1Set
from ..core_mdp import TabularMdp


@dataclass(frozen=True)
class GarnetSpec:
    n_states: int
    n_actions: int
    branching: int
    seed: int
    cost_max: float = 5.0
    kappa_low: float = 0.3
    kappa_high: float = 0.6
    gamma: float = 0.95

    def __post_init__(self) -> None:
        if self.n_states < 1 or self.n_actions < 1:
            raise ValueError("need at least one state and one action")
        if not 1 <= self.branching <= self.n_states:
            raise ValueError(f"branching factor must lie in [1, {self.n_states}], got {self.branching}")
        if self.cost_max <= 0:
            raise ValueError("cost_max must be positive")
        if not 0 <= self.kappa_low <= self.kappa_high:
            raise ValueError("need 0 <= kappa_low <= kappa_high")


def _uniform_spacings(rng: np.random.Generator, k: int) -> np.ndarray:
    """Dirichlet(1, ..., 1) sample from sorted uniform spacings."""
    cuts = np.sort(rng.random(k - 1))
    return np.diff(np.concatenate(([0.0], cuts, [1.0])))


def garnet_generate(spec: GarnetSpec) -> tuple[TabularMdp, SaRectL1Set, SRectL1Set]:
    """Garnet MDP plus its (s,a)- and s-rectangular L1 sets around the nominal kernel.

    Each (s, a) row has exactly ``branching`` successors drawn without replacement,
    with Dirichlet-uniform probabilities. Costs are U[0, cost_max] per (s, a, s'),
    radii are U[kappa_low, kappa_high] and the initial distribution is uniform.
    """
    rng = np.random.default_rng(spec.seed)
    S, A, b = spec.n_states, spec.n_actions, spec.branching
    kernel = np.zeros((S, A, S))
    for s in range(S):
        for a in range(A):
            support = rng.choice(S, size=b, replace=False)
            kernel[s, a, support] = _uniform_spacings(rng, b)
    cost = spec.cost_max * rng.random((S, A, S))
    width = spec.kappa_high - spec.kappa_low
    kappa_sa = spec.kappa_low + width * rng.random((S, A))
    kappa_s = spec.kappa_low + width * rng.random(S)
    mdp = TabularMdp(cost=cost, kernel=kernel, rho=np.full(S, 1.0 / S), gamma=spec.gamma)
    return mdp, SaRectL1Set(kernel, kappa_sa), SRectL1Set(kernel, kappa_s)
