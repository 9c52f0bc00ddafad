"""Command line entry point: run, suite, bench-metrics and ablate."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .config import ARMS, ExperimentConfig, load_experiment
from .errors import ServoError
from .harness import ablation_stats, bench_rows, run_bench_metrics, run_one, run_suite, write_csv


def _config(args) -> ExperimentConfig:
    cfg = load_experiment(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.episodes is not None:
        cfg = replace(cfg, episodes=args.episodes)
    return cfg


def cmd_run(args) -> int:
    cfg = _config(args)
    cond = args.condition or cfg.conditions[0]
    trace = run_one(cfg, cond, args.arm, cfg.seed)
    text = json.dumps(trace, sort_keys=True)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text + "\n")
    print(f"seed={cfg.seed} arm={args.arm} success={trace['success']} failure={trace['failure']} "
          f"steps={len(trace['steps'])}", file=sys.stderr)
    return 0


def _print_report(report) -> None:
    for r in report:
        print(f"{r['condition']:6s} {r['arm']:9s} n={r['episodes']:3d} success={r['successRate']:.2f} "
              f"medErr={1000 * r['medianFinalErrorT_m']:.2f}mm/{r['medianFinalErrorR_rad'] * 57.29578:.2f}deg "
              f"medSteps={r['medianSteps']:.0f}")


def cmd_suite(args) -> int:
    cfg = _config(args)
    res = run_suite(cfg, args.out, parallel=args.parallel)
    _print_report(res.report)
    return 0


def cmd_bench(args) -> int:
    cfg = _config(args)
    m = run_bench_metrics(cfg.benchTrials, cfg.benchFrames, cfg.noise, cfg.seed)
    rows = bench_rows(m)
    text = write_csv(rows, ["metric", "translation", "rotation", "unit"])
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench.csv").write_text(text, encoding="utf-8", newline="")
    sys.stdout.write(text)
    print(f"failed fits: {m['failedFits']} of {m['samples']}", file=sys.stderr)
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args)
    cond = args.condition or "4dof"
    res = run_suite(cfg, args.out, parallel=args.parallel, conditions=(cond,), arms=ARMS)
    _print_report(res.report)
    for k, v in ablation_stats(res.rows, cond).items():
        print(f"{k}: {v:.4g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bottleneck-servo", description=__doc__)
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp):
        sp.add_argument("--config", help="experiment JSON")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--episodes", type=int)
        sp.add_argument("--out", help="output file (run) or directory")
        sp.add_argument("--parallel", type=int, default=1, help="worker processes")

    sp = sub.add_parser("run", help="one episode, emits its trace JSON")
    common(sp)
    sp.add_argument("--arm", choices=ARMS, default="full")
    sp.add_argument("--condition")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("suite", help="conditions x arms x seeds grid")
    common(sp)
    sp.set_defaults(func=cmd_suite)

    sp = sub.add_parser("bench-metrics", help="matcher metrics over the viewpoint grid")
    common(sp)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("ablate", help="full vs stage-2 vs open-loop arms on one condition")
    common(sp)
    sp.add_argument("--condition")
    sp.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ServoError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
