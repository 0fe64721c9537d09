"""Experiment runners: seeded solver runs written out as CSV tables.

Each runner takes a validated config, fans seeds out to a bounded thread pool,
merges the per-seed shards in seed order and writes its tables under the output
directory. Wall-clock measurements go to separate ``*_timing.csv`` files so that
every other table is byte-identical across reruns of the same config.
"""
from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from . import invariants
from .drpmd import Direct, OuterConfig, drpmd_solve
from .environments.cartpole import CartPoleEnv, cartpole_robustness_eval
from .environments.garnet import GarnetSpec, garnet_generate
from .environments.inventory import (InventoryEnv, ball_vertices, default_demand, default_xi_set, level_grid,
                                     surrogate_objective, worst_case_objective)
from .inner_solvers import ConstantStep, InfiniteStep, InnerConfig, robust_value_iterate_optimal
from .monte_carlo import McConfig, McReport, mc_pg, rmcpmd
from .param_transitions import BallSet

KINDS = ("garnet_convergence", "tolerance_benchmark", "inventory", "cartpole", "invariant_suite")
PERCENTILES = (5, 50, 95)


# ---------------------------------------------------------------------------
# configs

@dataclass(frozen=True)
class GarnetConvergenceConfig:
    seeds: list[int] = field(default_factory=lambda: list(range(20)))
    sizes: list[list[int]] = field(default_factory=lambda: [[5, 4, 3], [10, 6, 3]])
    rectangularity: list[str] = field(default_factory=lambda: ["sa", "s"])
    max_outer: int = 200
    geometry: str = "se"
    alpha_cap_sa: float = 1e8
    alpha_cap_s: float = 0.05
    gamma: float = 0.95
    cost_max: float = 5.0
    kappa_low: float = 0.3
    kappa_high: float = 0.6
    gap_factor: float = 1e-3
    output_dir: str = "out/garnet_convergence"


@dataclass(frozen=True)
class ToleranceBenchmarkConfig:
    seeds: list[int] = field(default_factory=lambda: list(range(20)))
    sizes: list[list[int]] = field(default_factory=lambda: [[10, 6, 3]])
    rectangularity: list[str] = field(default_factory=lambda: ["sa"])
    eps_exact: float = 1e-6
    term_tol: float = 1e-5
    max_outer: int = 300
    inner_beta: float | None = 1.0
    inner_max_iters: int = 1000
    alpha_cap: float = 1e8
    gamma: float = 0.95
    output_dir: str = "out/tolerance_benchmark"


@dataclass(frozen=True)
class InventoryConfig:
    seeds: list[int] = field(default_factory=lambda: list(range(10)))
    mc: McConfig = McConfig(n_passes=100, n_inner=5, n_outer=5, horizon=50, beta0=0.1, alpha0=1e-4)
    demand_sigma: float = 1.0
    eta_radius: float = 15.0
    grid_step: float = 0.5
    eval_beta0: float = 0.1
    eval_iters: int = 100
    trace_every: int = 1
    output_dir: str = "out/inventory"


@dataclass(frozen=True)
class CartpoleConfig:
    seeds: list[int] = field(default_factory=lambda: list(range(10)))
    mc: McConfig = McConfig(n_passes=800, n_inner=16, n_outer=64, horizon=1000, beta0=1e-3, alpha0=0.3,
                            discount_step=False, batch=True, max_grad_norm=1.0)
    gamma: float = 0.97
    noise_var: float = 1e-4
    kappa0: float = 0.006
    delta_unit: float = 0.002
    levels: list[int] = field(default_factory=lambda: [0, 1, 2, 3])
    eval_episodes: int = 200
    eval_steps: int = 1000
    trace_every: int = 10
    output_dir: str = "out/cartpole"


@dataclass(frozen=True)
class InvariantConfig:
    seeds: list[int] = field(default_factory=lambda: list(range(5)))
    checks: list[str] | None = None
    output_dir: str = "out/invariants"


CONFIG_TYPES: dict[str, type] = {
    "garnet_convergence": GarnetConvergenceConfig,
    "tolerance_benchmark": ToleranceBenchmarkConfig,
    "inventory": InventoryConfig,
    "cartpole": CartpoleConfig,
    "invariant_suite": InvariantConfig,
}


def _check_keys(raw: dict, allowed: Iterable[str], where: str) -> None:
    unknown = sorted(set(raw) - set(allowed))
    if unknown:
        raise ValueError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def _validate(kind: str, cfg: Any) -> None:
    if not cfg.seeds == sorted(set(cfg.seeds)) or any(not isinstance(s, int) or s < 0 for s in cfg.seeds):
        raise ValueError("seeds must be distinct nonnegative integers in increasing order")
    if kind in ("garnet_convergence", "tolerance_benchmark"):
        for size in cfg.sizes:
            if len(size) != 3:
                raise ValueError(f"each size is [S, A, b], got {size}")
            GarnetSpec(*size, seed=0)
        bad = set(cfg.rectangularity) - {"sa", "s"}
        if bad or not cfg.rectangularity:
            raise ValueError("rectangularity must list 'sa' and/or 's'")
    if kind in ("inventory", "cartpole") and cfg.trace_every < 1:
        raise ValueError("trace_every must be at least 1")
    if kind == "invariant_suite" and cfg.checks is not None:
        missing = set(cfg.checks) - set(invariants.CHECKS)
        if missing:
            raise ValueError(f"unknown checks: {', '.join(sorted(missing))}")


def parse_config(raw: dict) -> tuple[str, Any]:
    """Validate a config mapping; returns (experiment kind, config dataclass)."""
    if not isinstance(raw, dict) or "experiment" not in raw:
        raise ValueError("config must be an object with an 'experiment' key")
    kind = raw["experiment"]
    if kind not in CONFIG_TYPES:
        raise ValueError(f"unknown experiment kind {kind!r}; expected one of {', '.join(KINDS)}")
    cls = CONFIG_TYPES[kind]
    body = {k: v for k, v in raw.items() if k != "experiment"}
    _check_keys(body, [f.name for f in fields(cls)], kind)
    if "mc" in body:
        mc = body["mc"]
        _check_keys(mc, [f.name for f in fields(McConfig)], f"{kind}.mc")
        body["mc"] = replace(cls().mc, **mc)
    try:
        cfg = cls(**body)
    except TypeError as exc:
        raise ValueError(str(exc)) from exc
    _validate(kind, cfg)
    return kind, cfg


def load_config(path: str | Path) -> tuple[str, Any]:
    with open(path) as fh:
        return parse_config(json.load(fh))


# ---------------------------------------------------------------------------
# shared plumbing

@dataclass
class Outcome:
    files: list[Path] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def fmt(x: Any) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(x) for x in r])
    return path


def map_ordered(fn: Callable[[Any], Any], items: list, threads: int) -> list:
    """fn over items on a bounded pool; results come back in item order, exceptions as values."""
    def safe(item):
        try:
            return fn(item)
        except Exception as exc:  # noqa: BLE001 - reported per item, never swallowed
            return exc
    if threads <= 1 or len(items) <= 1:
        return [safe(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(safe, items))


def _split(results: list, labels: list[str], outcome: Outcome) -> list:
    kept = []
    for res, label in zip(results, labels):
        if isinstance(res, Exception):
            outcome.failures.append(f"{label}: {type(res).__name__}: {res}")
        else:
            kept.append(res)
    return kept


def percentile_row(values: np.ndarray) -> list[float]:
    return [float(np.percentile(values, q)) for q in PERCENTILES]


def size_tag(size: Sequence[int], rect: str) -> str:
    return f"S{size[0]}_A{size[1]}_b{size[2]}_{rect}"


# ---------------------------------------------------------------------------
# Garnet convergence

def _garnet_one(cfg: GarnetConvergenceConfig, size: list[int], rect: str, seed: int,
                timeout_s: float | None) -> dict:
    spec = GarnetSpec(*size, seed=seed, cost_max=cfg.cost_max, kappa_low=cfg.kappa_low,
                      kappa_high=cfg.kappa_high, gamma=cfg.gamma)
    mdp, sa, s = garnet_generate(spec)
    amb = sa if rect == "sa" else s
    t0 = time.perf_counter()
    v, _, _, rvi_ok = robust_value_iterate_optimal(mdp, amb, 1e-10)
    rvi_s = time.perf_counter() - t0
    phi = float(mdp.rho @ v)
    outer = OuterConfig(Direct(cfg.geometry), max_outer=cfg.max_outer, term_tol=0.0,
                        alpha_max=cfg.alpha_cap_sa if rect == "sa" else cfg.alpha_cap_s)
    t0 = time.perf_counter()
    rep = drpmd_solve(mdp, amb, outer, phi_star=phi, deadline_s=timeout_s)
    solve_s = time.perf_counter() - t0
    scale = mdp.cost_scale / (1.0 - mdp.gamma)
    trace = [(r.t, r.J, phi, abs(r.J - phi), abs(r.J - phi) / abs(phi), r.eps, r.alpha, r.inner_iters)
             for r in rep.rows]
    gap = rep.best_J - phi
    return dict(trace=trace, phi=phi, rep=rep, gap=gap, tol=cfg.gap_factor * scale, rvi_ok=rvi_ok,
                rvi_s=rvi_s, solve_s=solve_s, solve_ns=[r.wall_ns for r in rep.rows])


def run_garnet_convergence(cfg: GarnetConvergenceConfig, out: Path, threads: int = 1,
                           timeout_s: float | None = None) -> Outcome:
    outcome = Outcome()
    jobs = [(tuple(size), rect, seed) for size in cfg.sizes for rect in cfg.rectangularity for seed in cfg.seeds]
    results = map_ordered(lambda j: _garnet_one(cfg, list(j[0]), j[1], j[2], timeout_s), jobs, threads)
    labels = [f"{size_tag(*j[:2])} seed {j[2]}" for j in jobs]
    trace_header = ["t", "J", "phi_rvi", "abs_diff", "rel_diff", "eps", "alpha", "inner_iters"]
    result_rows, timing_rows, summary_rows = [], [], []
    per_group: dict[tuple, list[np.ndarray]] = {}
    for (size, rect, seed), res, label in zip(jobs, results, labels):
        if isinstance(res, Exception):
            outcome.failures.append(f"{label}: {type(res).__name__}: {res}")
            continue
        rep = res["rep"]
        if rep.censored:
            outcome.failures.append(f"{label}: censored by timeout")
        outcome.files.append(write_csv(out / "garnet_convergence" / size_tag(size, rect) / f"seed_{seed:04d}.csv",
                                       trace_header, res["trace"]))
        result_rows.append([*size, rect, seed, res["phi"], rep.best_index, rep.best_J, res["gap"], rep.phi,
                            res["tol"], abs(res["gap"]) <= res["tol"], rep.inner_failures, rep.censored,
                            res["rvi_ok"]])
        timing_rows.append([*size, rect, seed, res["rvi_s"], res["solve_s"]])
        diffs = np.array([(row[3], row[4]) for row in res["trace"]])
        per_group.setdefault((size, rect), []).append(diffs)
    for (size, rect), traces in per_group.items():
        # a run that terminated early keeps its final iterate for the remaining steps
        n = max(len(t) for t in traces)
        stack = np.stack([np.concatenate([t, np.repeat(t[-1:], n - len(t), axis=0)]) for t in traces])
        for t in range(n):
            summary_rows.append([*size, rect, t, len(traces), *percentile_row(stack[:, t, 0]),
                                 *percentile_row(stack[:, t, 1])])
    outcome.files.append(write_csv(out / "garnet_results.csv",
                                   ["S", "A", "b", "rect", "seed", "phi_rvi", "best_index", "best_J", "best_gap",
                                    "phi_best_policy", "gap_tol", "within_tol", "inner_failures", "censored",
                                    "rvi_converged"], result_rows))
    outcome.files.append(write_csv(out / "garnet_summary.csv",
                                   ["S", "A", "b", "rect", "t", "n_seeds",
                                    *[f"abs_p{q}" for q in PERCENTILES], *[f"rel_p{q}" for q in PERCENTILES]],
                                   summary_rows))
    outcome.files.append(write_csv(out / "garnet_timing.csv", ["S", "A", "b", "rect", "seed", "rvi_s", "drpmd_s"],
                                   timing_rows))
    return outcome


# ---------------------------------------------------------------------------
# tolerance benchmark

def tolerance_configs(cfg: ToleranceBenchmarkConfig, gamma: float) -> dict[str, OuterConfig]:
    """The fixed-tolerance (Exa) and decaying-tolerance (Dec) solver settings."""
    schedule = InfiniteStep() if cfg.inner_beta is None else ConstantStep(cfg.inner_beta)
    base = OuterConfig(Direct("se"), max_outer=cfg.max_outer, term_tol=cfg.term_tol, alpha_max=cfg.alpha_cap,
                       inner=InnerConfig(schedule=schedule, max_iters=cfg.inner_max_iters))
    return {"exa": replace(base, eps0=cfg.eps_exact, decay=1.0), "dec": replace(base, eps0=1.0, decay=gamma)}


def _tolerance_one(cfg: ToleranceBenchmarkConfig, size: list[int], rect: str, seed: int,
                   timeout_s: float | None) -> dict:
    mdp, sa, s = garnet_generate(GarnetSpec(*size, seed=seed, gamma=cfg.gamma))
    amb = sa if rect == "sa" else s
    out = {}
    for method, outer in tolerance_configs(cfg, mdp.gamma).items():
        t0 = time.perf_counter()
        rep = drpmd_solve(mdp, amb, outer, deadline_s=timeout_s)
        out[method] = (rep, time.perf_counter() - t0)
    return out


def run_tolerance_benchmark(cfg: ToleranceBenchmarkConfig, out: Path, threads: int = 1,
                            timeout_s: float | None = None) -> Outcome:
    outcome = Outcome()
    jobs = [(tuple(size), rect, seed) for size in cfg.sizes for rect in cfg.rectangularity for seed in cfg.seeds]
    results = map_ordered(lambda j: _tolerance_one(cfg, list(j[0]), j[1], j[2], timeout_s), jobs, threads)
    rows, timing, groups = [], [], {}
    for (size, rect, seed), res in zip(jobs, results):
        if isinstance(res, Exception):
            outcome.failures.append(f"{size_tag(size, rect)} seed {seed}: {type(res).__name__}: {res}")
            continue
        for method in ("exa", "dec"):
            rep, wall = res[method]
            rows.append([*size, rect, seed, method, len(rep.rows), rep.total_inner_iters, rep.best_J, rep.phi,
                         rep.inner_failures, rep.censored])
            timing.append([*size, rect, seed, method, wall, rep.censored])
            groups.setdefault((size, rect), {}).setdefault(method, []).append((rep, wall))
        diff = abs(res["exa"][0].phi - res["dec"][0].phi)
        groups[(size, rect)].setdefault("diff", []).append(diff)
    summary, summary_timing = [], []
    for (size, rect), g in groups.items():
        it = {m: float(np.mean([r.total_inner_iters for r, _ in g[m]])) for m in ("exa", "dec")}
        wall = {m: float(np.mean([w for _, w in g[m]])) for m in ("exa", "dec")}
        cens = sum(r.censored for m in ("exa", "dec") for r, _ in g[m])
        summary.append([*size, rect, len(g["exa"]), it["exa"], it["dec"], it["dec"] / it["exa"], max(g["diff"]), cens])
        summary_timing.append([*size, rect, len(g["exa"]), wall["exa"], wall["dec"], wall["dec"] / wall["exa"], cens])
    outcome.files.append(write_csv(out / "tolerance_benchmark.csv",
                                   ["S", "A", "b", "rect", "seed", "method", "outer_iters", "inner_iters", "best_J",
                                    "phi", "inner_failures", "censored"], rows))
    outcome.files.append(write_csv(out / "tolerance_summary.csv",
                                   ["S", "A", "b", "rect", "n_seeds", "exa_mean_inner_iters", "dec_mean_inner_iters",
                                    "inner_iter_ratio", "max_phi_diff", "censored"], summary))
    outcome.files.append(write_csv(out / "tolerance_timing.csv",
                                   ["S", "A", "b", "rect", "seed", "method", "wall_s", "censored"], timing))
    outcome.files.append(write_csv(out / "tolerance_summary_timing.csv",
                                   ["S", "A", "b", "rect", "n_seeds", "exa_mean_wall_s", "dec_mean_wall_s",
                                    "wall_ratio", "censored"], summary_timing))
    return outcome


# ---------------------------------------------------------------------------
# Monte-Carlo experiments

TRACE_HEADER = ["seed", "method", "pass", "phase", "episode", "J_estimate", "param_norm"]


def trace_rows(seed: int, method: str, rep: McReport, every: int) -> list[list]:
    return [[seed, method, r.pass_index, r.phase, r.episode, r.J_estimate, r.param_norm]
            for r in rep.rows if r.pass_index % every == 0]


def seed_stream(seed: int, purpose: str) -> np.random.Generator:
    """Independent streams per seed for non-robust training, robust training and evaluation."""
    return np.random.default_rng([seed, ("nonrobust", "robust", "evaluation").index(purpose)])


def inventory_env(cfg: InventoryConfig) -> InventoryEnv:
    return InventoryEnv(demand=default_demand(cfg.demand_sigma))


def _inventory_one(cfg: InventoryConfig, seed: int) -> dict:
    env = inventory_env(cfg)
    xi_set = default_xi_set(env.demand, cfg.eta_radius)
    grid = level_grid(env, cfg.grid_step)
    theta0 = np.zeros(env.n_policy_features)
    t0 = time.perf_counter()
    nominal = mc_pg(env, theta0, cfg.mc, seed_stream(seed, "nonrobust"))
    t1 = time.perf_counter()
    robust = rmcpmd(env, theta0, env.demand.params, xi_set, cfg.mc, seed_stream(seed, "robust"))
    t2 = time.perf_counter()
    starts = ball_vertices(env, cfg.eta_radius)
    evals = {}
    for method, rep in (("nonrobust", nominal), ("robust", robust)):
        wc = worst_case_objective(env, rep.theta, xi_set, grid, starts, cfg.eval_beta0, cfg.eval_iters)
        evals[method] = (wc, surrogate_objective(env, rep.theta, None, grid))
    t3 = time.perf_counter()
    return dict(reports={"nonrobust": nominal, "robust": robust}, evals=evals,
                timing=[("nonrobust", t1 - t0), ("robust", t2 - t1), ("evaluation", t3 - t2)])


def run_inventory(cfg: InventoryConfig, out: Path, threads: int = 1, timeout_s: float | None = None) -> Outcome:
    outcome = Outcome()
    results = map_ordered(lambda s: _inventory_one(cfg, s), cfg.seeds, threads)
    trace, table, timing, paired = [], [], [], []
    for seed, res in zip(cfg.seeds, results):
        if isinstance(res, Exception):
            outcome.failures.append(f"inventory seed {seed}: {type(res).__name__}: {res}")
            continue
        for method in ("nonrobust", "robust"):
            trace += trace_rows(seed, method, res["reports"][method], cfg.trace_every)
            wc, nominal_J = res["evals"][method]
            table.append([seed, method, wc.J, nominal_J, *np.round(wc.xi, 12)])
        paired.append((res["evals"]["robust"][0].J, res["evals"]["nonrobust"][0].J))
        timing += [[seed, name, wall] for name, wall in res["timing"]]
    xi_cols = [f"worst_xi_{k}" for k in range(inventory_env(cfg).demand.params.size)]
    outcome.files.append(write_csv(out / "inventory_trace.csv", TRACE_HEADER, trace))
    outcome.files.append(write_csv(out / "inventory_results.csv",
                                   ["seed", "method", "worst_case_J", "nominal_J", *xi_cols], table))
    summary = []
    if paired:
        arr = np.array(paired)
        summary.append([len(paired), float(np.median(arr[:, 0])), float(np.median(arr[:, 1])),
                        int(np.sum(arr[:, 0] <= arr[:, 1]))])
    outcome.files.append(write_csv(out / "inventory_summary.csv",
                                   ["n_seeds", "robust_median_worst_J", "nonrobust_median_worst_J",
                                    "robust_not_worse_count"], summary))
    outcome.files.append(write_csv(out / "inventory_timing.csv", ["seed", "stage", "wall_s"], timing))
    return outcome


def cartpole_env(cfg: CartpoleConfig) -> CartPoleEnv:
    return CartPoleEnv(noise_var=cfg.noise_var, gamma=cfg.gamma)


def _cartpole_one(cfg: CartpoleConfig, seed: int) -> dict:
    env = cartpole_env(cfg)
    theta0 = np.zeros(env.n_policy_features)
    half = cfg.kappa0 / 2.0
    xi_set = BallSet(np.array([half]), half, "linf")
    t0 = time.perf_counter()
    nominal = mc_pg(env, theta0, cfg.mc, seed_stream(seed, "nonrobust"))
    t1 = time.perf_counter()
    robust = rmcpmd(env, theta0, np.zeros(1), xi_set, cfg.mc, seed_stream(seed, "robust"))
    t2 = time.perf_counter()
    tables = {}
    for method, rep in (("nonrobust", nominal), ("robust", robust)):
        # a fresh copy of the evaluation stream: both policies face the same disturbance draws
        tables[method] = cartpole_robustness_eval(env, rep.theta, cfg.levels, cfg.delta_unit, cfg.eval_episodes,
                                                  cfg.eval_steps, seed_stream(seed, "evaluation"))
    t3 = time.perf_counter()
    return dict(reports={"nonrobust": nominal, "robust": robust}, tables=tables,
                timing=[("nonrobust", t1 - t0), ("robust", t2 - t1), ("evaluation", t3 - t2)])


def run_cartpole(cfg: CartpoleConfig, out: Path, threads: int = 1, timeout_s: float | None = None) -> Outcome:
    outcome = Outcome()
    results = map_ordered(lambda s: _cartpole_one(cfg, s), cfg.seeds, threads)
    trace, table, timing = [], [], []
    success: dict[tuple[str, int], list[float]] = {}
    for seed, res in zip(cfg.seeds, results):
        if isinstance(res, Exception):
            outcome.failures.append(f"cartpole seed {seed}: {type(res).__name__}: {res}")
            continue
        for method in ("nonrobust", "robust"):
            trace += trace_rows(seed, method, res["reports"][method], cfg.trace_every)
            for r in res["tables"][method]:
                table.append([seed, method, r.level, r.delta_bound, r.episodes, r.min_steps, r.max_steps,
                              r.mean_steps, r.success_rate])
                success.setdefault((method, r.level), []).append(r.success_rate)
        timing += [[seed, name, wall] for name, wall in res["timing"]]
    summary = [[level, len(success[("robust", level)]), float(np.median(success[("nonrobust", level)])),
                float(np.median(success[("robust", level)]))]
               for level in cfg.levels if ("robust", level) in success]
    outcome.files.append(write_csv(out / "cartpole_trace.csv", TRACE_HEADER, trace))
    outcome.files.append(write_csv(out / "cartpole_results.csv",
                                   ["seed", "method", "level", "delta_bound", "episodes", "min_steps", "max_steps",
                                    "mean_steps", "success_rate"], table))
    outcome.files.append(write_csv(out / "cartpole_summary.csv",
                                   ["level", "n_seeds", "nonrobust_median_success", "robust_median_success"], summary))
    outcome.files.append(write_csv(out / "cartpole_timing.csv", ["seed", "stage", "wall_s"], timing))
    return outcome


# ---------------------------------------------------------------------------
# invariant suite

def run_invariant_suite(cfg: InvariantConfig, out: Path, threads: int = 1, timeout_s: float | None = None) -> Outcome:
    outcome = Outcome()
    names = cfg.checks or list(invariants.CHECKS)
    batches = map_ordered(lambda name: invariants.run_checks(cfg.seeds, [name]), names, threads)
    records = [r for batch in _split(batches, names, outcome) for r in batch]
    for r in records:
        if not r.passed:
            outcome.failures.append(f"{r.check} ({r.module}) seed {r.seed}: value {r.value!r} > tol {r.tol!r}")
    outcome.files.append(write_csv(out / "invariants.csv", ["check", "module", "seed", "value", "tol", "passed"],
                                   [[r.check, r.module, r.seed, r.value, r.tol, r.passed] for r in records]))
    return outcome


RUNNERS: dict[str, Callable[..., Outcome]] = {
    "garnet_convergence": run_garnet_convergence,
    "tolerance_benchmark": run_tolerance_benchmark,
    "inventory": run_inventory,
    "cartpole": run_cartpole,
    "invariant_suite": run_invariant_suite,
}


def run_experiment(kind: str, cfg: Any, out: str | Path | None = None, threads: int = 1,
                   timeout_s: float | None = None) -> Outcome:
    return RUNNERS[kind](cfg, Path(out if out is not None else cfg.output_dir), threads, timeout_s)
