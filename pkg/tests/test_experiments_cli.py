import csv
import json
from pathlib import Path

import numpy as np
import pytest

from rmdp_kit import cli
from rmdp_kit.experiments import (CONFIG_TYPES, fmt, load_config, map_ordered, parse_config, run_experiment,
                                  seed_stream, write_csv)

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"

TINY = {
    "garnet_convergence": {"seeds": [0, 1], "sizes": [[4, 3, 2]], "rectangularity": ["sa", "s"], "max_outer": 15},
    "tolerance_benchmark": {"seeds": [0, 1], "sizes": [[4, 3, 2]], "max_outer": 40},
    "inventory": {"seeds": [0, 1], "mc": {"n_passes": 2, "n_inner": 2, "n_outer": 2, "horizon": 10},
                  "grid_step": 2.0, "eval_iters": 3},
    "cartpole": {"seeds": [0, 1], "mc": {"n_passes": 2, "n_inner": 2, "n_outer": 2, "horizon": 30},
                 "eval_episodes": 5, "eval_steps": 30},
    "invariant_suite": {"seeds": [0], "checks": ["policy_perf_diff", "grad_softmax_fd"]},
}


def tiny(kind, **extra):
    return parse_config({"experiment": kind, **TINY[kind], **extra})[1]


def read(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def result_bytes(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*.csv"))
            if not p.name.endswith("_timing.csv")}


class TestConfigParsing:
    @pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.json")), ids=lambda p: p.name)
    def test_shipped_configs_parse(self, path):
        kind, cfg = load_config(path)
        assert isinstance(cfg, CONFIG_TYPES[kind])

    def test_mc_block_merges_over_defaults(self):
        cfg = tiny("cartpole")
        assert cfg.mc.n_passes == 2 and cfg.mc.beta0 == CONFIG_TYPES["cartpole"]().mc.beta0

    @pytest.mark.parametrize("raw", [
        {},
        {"experiment": "nope"},
        {"experiment": "inventory", "colour": 1},
        {"experiment": "inventory", "mc": {"n_passes": 2, "speed": 3}},
        {"experiment": "inventory", "seeds": [2, 1]},
        {"experiment": "inventory", "seeds": [1, 1]},
        {"experiment": "inventory", "seeds": [-1]},
        {"experiment": "inventory", "trace_every": 0},
        {"experiment": "garnet_convergence", "sizes": [[5, 4]]},
        {"experiment": "garnet_convergence", "sizes": [[5, 4, 9]]},
        {"experiment": "garnet_convergence", "rectangularity": ["sas"]},
        {"experiment": "invariant_suite", "checks": ["no_such_check"]},
        {"experiment": "cartpole", "mc": {"horizon": 0}},
    ])
    def test_rejects_bad_configs(self, raw):
        with pytest.raises(ValueError):
            parse_config(raw)


class TestPlumbing:
    def test_fmt(self):
        assert [fmt(True), fmt(np.float64(0.1)), fmt(3), fmt("sa")] == ["1", "0.1", "3", "sa"]

    def test_write_csv_line_endings(self, tmp_path):
        path = write_csv(tmp_path / "a" / "t.csv", ["x", "y"], [[1, 0.5]])
        assert path.read_bytes() == b"x,y\n1,0.5\n"

    @pytest.mark.parametrize("threads", [1, 3])
    def test_map_ordered_keeps_order_and_errors(self, threads):
        out = map_ordered(lambda x: 10 // x, [5, 0, 2, 1], threads)
        assert out[0] == 2 and isinstance(out[1], ZeroDivisionError) and out[2:] == [5, 10]

    def test_seed_streams_are_distinct(self):
        draws = [seed_stream(3, p).random() for p in ("nonrobust", "robust", "evaluation")]
        assert len(set(draws)) == 3 and seed_stream(3, "robust").random() == draws[1]


class TestGarnetRunner:
    def test_schema_for_both_rectangularities(self, tmp_path):
        outcome = run_experiment("garnet_convergence", tiny("garnet_convergence"), tmp_path)
        assert outcome.ok
        headers = {p.read_text().splitlines()[0] for p in (tmp_path / "garnet_convergence").rglob("seed_*.csv")}
        assert headers == {"t,J,phi_rvi,abs_diff,rel_diff,eps,alpha,inner_iters"}
        assert {r["rect"] for r in read(tmp_path / "garnet_results.csv")} == {"sa", "s"}

    def test_single_seed_summary_equals_trace(self, tmp_path):
        run_experiment("garnet_convergence", tiny("garnet_convergence", seeds=[3], rectangularity=["sa"]), tmp_path)
        trace = read(tmp_path / "garnet_convergence" / "S4_A3_b2_sa" / "seed_0003.csv")
        summary = read(tmp_path / "garnet_summary.csv")
        assert len(trace) == len(summary)
        for t, s in zip(trace, summary):
            for q in ("p5", "p50", "p95"):
                assert float(s[f"abs_{q}"]) == float(t["abs_diff"]) and float(s[f"rel_{q}"]) == float(t["rel_diff"])

    def test_empty_sizes_give_header_only_tables(self, tmp_path):
        run_experiment("garnet_convergence", tiny("garnet_convergence", sizes=[]), tmp_path / "g")
        run_experiment("tolerance_benchmark", tiny("tolerance_benchmark", sizes=[]), tmp_path / "t")
        for p in [*(tmp_path / "g").glob("*.csv"), *(tmp_path / "t").glob("*.csv")]:
            assert len(p.read_text().splitlines()) == 1

    def test_relative_difference_percentile(self, tmp_path):
        cfg = tiny("garnet_convergence", seeds=list(range(50)), sizes=[[5, 4, 3]], rectangularity=["sa"],
                   max_outer=200)
        assert run_experiment("garnet_convergence", cfg, tmp_path, threads=2).ok
        last = read(tmp_path / "garnet_summary.csv")[-1]
        assert int(last["t"]) == 199 and int(last["n_seeds"]) == 50
        assert float(last["rel_p95"]) <= 1e-2 * 5.0 / (1 - 0.95)

    def test_timeout_is_reported_as_failure(self, tmp_path):
        outcome = run_experiment("garnet_convergence", tiny("garnet_convergence", seeds=[0]), tmp_path, timeout_s=0.0)
        assert not outcome.ok and all("censored" in f for f in outcome.failures)
        assert {r["censored"] for r in read(tmp_path / "garnet_results.csv")} == {"1"}


class TestOtherRunners:
    def test_tolerance_tables(self, tmp_path):
        assert run_experiment("tolerance_benchmark", tiny("tolerance_benchmark"), tmp_path).ok
        rows = read(tmp_path / "tolerance_benchmark.csv")
        assert [r["method"] for r in rows] == ["exa", "dec", "exa", "dec"]
        summary = read(tmp_path / "tolerance_summary.csv")[0]
        assert float(summary["inner_iter_ratio"]) < 1 and float(summary["max_phi_diff"]) <= 1e-5

    def test_invariant_table(self, tmp_path):
        assert run_experiment("invariant_suite", tiny("invariant_suite"), tmp_path).ok
        rows = read(tmp_path / "invariants.csv")
        assert [r["check"] for r in rows] == ["policy_perf_diff", "grad_softmax_fd"]
        assert all(r["passed"] == "1" for r in rows)

    def test_inventory_tables(self, tmp_path):
        assert run_experiment("inventory", tiny("inventory"), tmp_path).ok
        assert len(read(tmp_path / "inventory_results.csv")) == 4
        assert read(tmp_path / "inventory_summary.csv")[0]["n_seeds"] == "2"

    def test_cartpole_tables(self, tmp_path):
        assert run_experiment("cartpole", tiny("cartpole"), tmp_path).ok
        rows = read(tmp_path / "cartpole_results.csv")
        assert len(rows) == 2 * 2 * 4 and {r["episodes"] for r in rows} == {"5"}
        assert [r["level"] for r in read(tmp_path / "cartpole_summary.csv")] == ["0", "1", "2", "3"]


class TestDeterminism:
    @pytest.mark.parametrize("kind", sorted(TINY))
    def test_rerun_and_threads_are_byte_identical(self, tmp_path, kind):
        cfg = tiny(kind)
        run_experiment(kind, cfg, tmp_path / "a")
        run_experiment(kind, cfg, tmp_path / "b")
        run_experiment(kind, cfg, tmp_path / "c", threads=2)
        a = result_bytes(tmp_path / "a")
        assert a and a == result_bytes(tmp_path / "b") == result_bytes(tmp_path / "c")


class TestCli:
    def write(self, tmp_path, kind, **extra):
        path = tmp_path / f"{kind}.json"
        path.write_text(json.dumps({"experiment": kind, **TINY[kind], **extra}))
        return str(path)

    def test_success(self, tmp_path, capsys):
        code = cli.main(["invariants", self.write(tmp_path, "invariant_suite"), "--out", str(tmp_path / "o")])
        assert code == 0 and "invariants.csv" in capsys.readouterr().out

    def test_seed_override(self, tmp_path):
        cfg = self.write(tmp_path, "invariant_suite")
        assert cli.main(["invariants", cfg, "--out", str(tmp_path / "o"), "--seed-override", "4", "2", "4"]) == 0
        assert [r["seed"] for r in read(tmp_path / "o" / "invariants.csv")] == ["2", "4", "2", "4"]

    def test_kind_mismatch(self, tmp_path, capsys):
        assert cli.main(["cartpole", self.write(tmp_path, "invariant_suite")]) == 2
        assert "config error" in capsys.readouterr().err

    def test_bad_config(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"experiment": "cartpole", "mc": {"gamma": 3}}')
        assert cli.main(["cartpole", str(path)]) == 2
        assert cli.main(["cartpole", str(tmp_path / "missing.json")]) == 2

    def test_bad_threads(self, tmp_path, monkeypatch):
        cfg = self.write(tmp_path, "invariant_suite")
        assert cli.main(["invariants", cfg, "--threads", "0"]) == 2
        monkeypatch.setenv("RMDP_KIT_THREADS", "many")
        with pytest.raises(SystemExit):
            cli.main(["invariants", cfg])

    def test_timeout_exit_code(self, tmp_path, capsys):
        cfg = self.write(tmp_path, "garnet_convergence", seeds=[0], rectangularity=["sa"])
        assert cli.main(["garnet-convergence", cfg, "--out", str(tmp_path / "o"), "--timeout-s", "0"]) == 1
        assert "FAIL" in capsys.readouterr().err

    def test_failed_check_exit_code(self, tmp_path, monkeypatch, capsys):
        from rmdp_kit import core_mdp
        original = core_mdp.grad_softmax
        monkeypatch.setattr(core_mdp, "grad_softmax", lambda *a: -original(*a))
        assert cli.main(["invariants", self.write(tmp_path, "invariant_suite"), "--out", str(tmp_path / "o")]) == 1
        assert "grad_softmax_fd" in capsys.readouterr().err
