"""Command line entry point: ``fedrag {run,eval,verify,gradcheck}``."""
from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

from fedrag import gradcheck, oracle
from fedrag.agent import load_agent
from fedrag.config import ConfigError, load_config
from fedrag.envs import SimulationDivergence
from fedrag.harness import evaluate_checkpoint, run_experiment, summarize


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedrag", description="Federated RAG-metric SAC testbed.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train all clients and write metrics and checkpoints")
    run.add_argument("--config", required=True, type=Path)
    run.add_argument("--seed", type=int, help="override the config seed")
    run.add_argument("--out", type=Path, default=Path("runs/latest"), help="output directory")
    run.add_argument("--quiet", action="store_true")

    ev = sub.add_parser("eval", help="evaluate a checkpoint on every environment of a config")
    ev.add_argument("--checkpoint", required=True, type=Path)
    ev.add_argument("--config", required=True, type=Path)
    ev.add_argument("--episodes", type=int, help="episodes per environment (default from config)")
    ev.add_argument("--seed", type=int, help="evaluation seed (default from config)")

    ver = sub.add_parser("verify", help="run the exact tabular metric suites")
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--n-mdps", type=int, default=100)
    ver.add_argument("--report", type=Path, default=Path("verify_report.csv"))

    gc = sub.add_parser("gradcheck", help="finite-difference check of every loss gradient")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--per-network", action="store_true", help="one row per network instead of per loss")
    return parser


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if not args.quiet:
        logging.basicConfig(level=logging.INFO, format="%(message)s")
    t0 = time.perf_counter()
    try:
        result = run_experiment(cfg, args.out, progress=not args.quiet)
    except SimulationDivergence as exc:
        print(f"error: simulation diverged: {exc}; partial metrics in {args.out}", file=sys.stderr)
        return 1
    stats = summarize(result.rows, cfg.total_episodes)
    print(f"mode={cfg.mode.value} seed={cfg.seed} rounds={len(result.rounds)} rows={len(result.rows)} "
          f"time={time.perf_counter() - t0:.1f}s")
    for key, value in stats.items():
        print(f"  {key:<22} {value:9.3f}")
    print(f"wrote {args.out}/metrics.csv")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    if not args.checkpoint.is_file():
        print(f"error: checkpoint not found: {args.checkpoint}", file=sys.stderr)
        return 1
    agent, head = load_agent(args.checkpoint)
    episodes = args.episodes or cfg.eval_episodes
    seed = cfg.seed if args.seed is None else args.seed
    own = head.get("client_id")
    print("env_id,pole_length,same_env,mean_return,std_return")
    for env_id, mean, std in evaluate_checkpoint(agent, list(cfg.env_params), episodes, seed):
        same = "true" if env_id == own else "false"
        print(f"{env_id},{cfg.env_params[env_id].pole_length!r},{same},{mean!r},{std!r}")
    return 0


def cmd_verify(args) -> int:
    t0 = time.perf_counter()
    results = oracle.run_all_suites(args.seed, args.n_mdps)
    lines = ["suite,instances,max_violation,status"] + [r.line() for r in results]
    args.report.write_text("\n".join(lines) + "\n")
    print(f"{'suite':<24}{'instances':>10}  {'max violation':>14}  status")
    for r in results:
        print(f"{r.name:<24}{r.instances:>10}  {r.max_violation:>14.3e}  {'pass' if r.passed else 'FAIL'}")
    print(f"report: {args.report} ({time.perf_counter() - t0:.1f}s)")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"failed suites: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_gradcheck(args) -> int:
    t0 = time.perf_counter()
    results = gradcheck.run_gradchecks(args.seed)
    if not args.per_network:
        results = gradcheck.merge_by_loss(results)
    for r in results:
        print(r.line())
    print(f"h={gradcheck.STEP:g} tolerance={gradcheck.TOLERANCE:g} ({time.perf_counter() - t0:.1f}s)")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"gradient mismatch: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


COMMANDS = {"run": cmd_run, "eval": cmd_eval, "verify": cmd_verify, "gradcheck": cmd_gradcheck}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
