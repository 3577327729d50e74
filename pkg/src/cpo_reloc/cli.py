"""Command-line entry point: ``cpo-reloc {train,sweep,eval,demo}``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from .harness.config import ConfigError, ExperimentConfig, load_config


def _config(path) -> ExperimentConfig:
    return load_config(path) if path else ExperimentConfig()


def cmd_train(args) -> int:
    from .harness.train import train

    cfg = _config(args.config)
    if args.seed is not None:
        cfg = cfg.with_(training__seed=args.seed)
    if args.workers is not None:
        cfg = cfg.with_(training__workers=args.workers)
    metrics = train(cfg, args.out)
    last = metrics.rows[-1]
    print(f"{cfg.algorithm}: {len(metrics.rows) - 1} iterations, {last['samples']} samples, "
          f"success {last['success_rate']:.2f}, violations {last['avg_violations']:.2f}, J_C {last['jc']:.4f}")
    print(f"outputs written to {args.out}")
    if metrics.error:
        print(f"training stopped early: {metrics.error}", file=sys.stderr)
        return 1
    return 0


def cmd_sweep(args) -> int:
    from .harness.sweep import run_sweep

    base = _config(args.config)
    if args.iterations is not None:
        base = base.with_(training__iterations=args.iterations)
    result = run_sweep(args.experiment, args.out, base, seeds=args.seeds)
    for run in result.runs:
        status = result.failures.get(run.name)
        ev = result.evals.get(run.name)
        detail = f"eval success {ev.success_rate:.3f}, violations {ev.avg_violations:.2f}" if ev else ""
        print(f"{run.name}: {'FAILED ' + status if status else 'ok'} {detail}")
    print(f"summary written to {Path(args.out) / 'summary.csv'}")
    return 1 if result.failures else 0


def cmd_eval(args) -> int:
    from .harness.rollout import evaluate
    from .nn import load_policy

    cfg = _config(args.config)
    policy = load_policy(args.checkpoint)
    result = evaluate(policy, args.rollouts, cfg.constraint, cfg.env, args.seed)
    for key, value in result.row().items():
        print(f"{key}: {value}")
    return 0


def cmd_demo(args) -> int:
    from .env import ACT_DIM, OBS_DIM
    from .harness.learning import generate_demos

    cfg = _config(args.config)
    demos = generate_demos(args.n, args.seed, cfg.env, cfg.constraint)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["episode"] + [f"obs{i}" for i in range(OBS_DIM)] + [f"act{i}" for i in range(ACT_DIM)])
        for ep, obs, act in zip(demos.episode, demos.obs, demos.actions):
            writer.writerow([int(ep)] + [repr(float(v)) for v in obs] + [repr(float(v)) for v in act])
    print(f"{args.n} demonstrations ({len(demos)} steps) written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cpo-reloc", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress per iteration")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="behavior-clone then train one configuration")
    p.add_argument("--config", help="YAML experiment config (defaults if omitted)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override training.seed")
    p.add_argument("--workers", type=int, help="rollout worker threads")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="run one of the four constraint-parameter sweeps")
    p.add_argument("--experiment", type=int, choices=(1, 2, 3, 4), required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="base YAML config for everything the sweep does not vary")
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--iterations", type=int, help="override training.iterations")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", help="deterministic roll-out evaluation of a policy checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--rollouts", type=int, default=500)
    p.add_argument("--config", help="YAML config supplying the constraint and env settings")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("demo", help="write scripted-expert demonstrations as CSV")
    p.add_argument("--n", type=int, default=25)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=12345)
    p.add_argument("--config", help="YAML config supplying the constraint and env settings")
    p.set_defaults(func=cmd_demo)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
