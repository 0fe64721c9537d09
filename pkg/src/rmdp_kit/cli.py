"""Command-line entry point: ``rmdp-kit <subcommand> CONFIG.json [flags]``."""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from .experiments import load_config, run_experiment

SUBCOMMANDS = {
    "garnet-convergence": "garnet_convergence",
    "tolerance-benchmark": "tolerance_benchmark",
    "inventory": "inventory",
    "cartpole": "cartpole",
    "invariants": "invariant_suite",
}


def default_threads() -> int:
    raw = os.environ.get("RMDP_KIT_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise SystemExit(f"RMDP_KIT_THREADS must be an integer, got {raw!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rmdp-kit", description="Run robust-MDP experiments from a JSON config.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", help="path to the JSON experiment config")
        p.add_argument("--seed-override", type=int, nargs="+", metavar="SEED",
                       help="run these seeds instead of the config's list")
        p.add_argument("--out", help="output directory (default: the config's output_dir)")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads for seeds (default: $RMDP_KIT_THREADS or 1)")
        p.add_argument("--timeout-s", type=float, default=None,
                       help="wall-time cap per solver run; runs that hit it are recorded as censored")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        kind, cfg = load_config(args.config)
    except (OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    expected = SUBCOMMANDS[args.command]
    if kind != expected:
        print(f"config error: {args.config} is a {kind!r} config, not {expected!r}", file=sys.stderr)
        return 2
    if args.seed_override is not None:
        cfg = replace(cfg, seeds=sorted(set(args.seed_override)))
    threads = args.threads if args.threads is not None else default_threads()
    if threads < 1:
        print("--threads must be at least 1", file=sys.stderr)
        return 2
    outcome = run_experiment(kind, cfg, args.out, threads, args.timeout_s)
    for path in outcome.files:
        print(path)
    for msg in outcome.failures:
        print(f"FAIL {msg}", file=sys.stderr)
    return 0 if outcome.ok else 1


if __name__ == "__main__":
    sys.exit(main())
