"""The four constraint-parameter sweeps and their comparison outputs.

1. radius r in {0.1, 0.05, 0.03} for CPO, TRPO and TRPO-RP (c = 0.01, cl = 0.25)
2. radius r in {0.15, 0.05, 0.03} for CPO (c = 0.01, cl = 0.25)
3. cost limit cl in {0.5, 0.25, 0.1} for CPO (r = 0.05, c = 0.01)
4. penalty and limit (c, cl) in {(10, 250), (0.1, 2.5), (0.01, 0.25)} for CPO (r = 0.05)

Each run writes its own directory; the sweep directory gets ``summary.csv``
plus overlay plots of success rate and average violations against samples.
"""

from __future__ import annotations

import logging
import traceback
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ALGORITHMS, ExperimentConfig
from .train import RunMetrics, train, write_csv

log = logging.getLogger(__name__)

EXPERIMENTS = {
    1: {"algorithms": ALGORITHMS, "points": [dict(r=r, c=0.01, cl=0.25) for r in (0.1, 0.05, 0.03)]},
    2: {"algorithms": ("cpo",), "points": [dict(r=r, c=0.01, cl=0.25) for r in (0.15, 0.05, 0.03)]},
    3: {"algorithms": ("cpo",), "points": [dict(r=0.05, c=0.01, cl=cl) for cl in (0.5, 0.25, 0.1)]},
    4: {"algorithms": ("cpo",),
        "points": [dict(r=0.05, c=c, cl=cl) for c, cl in ((10.0, 250.0), (0.1, 2.5), (0.01, 0.25))]},
}

SUMMARY_COLUMNS = ("run", "algorithm", "r", "c", "cl", "seed", "iterations", "samples",
                   "samples_to_80", "final_success_rate", "trailing_jc", "eval_success_rate",
                   "eval_avg_violations", "error")


@dataclass(frozen=True)
class SweepRun:
    name: str
    config: ExperimentConfig


@dataclass
class SweepResult:
    experiment: int
    runs: list[SweepRun] = field(default_factory=list)
    metrics: dict[str, RunMetrics] = field(default_factory=dict)
    evals: dict[str, object] = field(default_factory=dict)
    failures: dict[str, str] = field(default_factory=dict)


def run_name(cfg: ExperimentConfig) -> str:
    k = cfg.constraint
    return f"{cfg.algorithm}_r{k.r:g}_c{k.c:g}_cl{k.cl:g}_s{cfg.training.seed}"


def sweep_configs(experiment: int, base: ExperimentConfig = ExperimentConfig(),
                  seeds: Sequence[int] = (0,)) -> list[SweepRun]:
    """Every (point, algorithm, seed) run of one experiment, with ``base`` supplying the rest."""
    if experiment not in EXPERIMENTS:
        raise ValueError(f"experiment must be one of {sorted(EXPERIMENTS)}, got {experiment!r}")
    spec = EXPERIMENTS[experiment]
    runs = []
    for point in spec["points"]:
        for algorithm in spec["algorithms"]:
            for seed in seeds:
                cfg = replace(base, algorithm=algorithm,
                              constraint=replace(base.constraint, **point)).with_(training__seed=seed)
                runs.append(SweepRun(run_name(cfg), cfg))
    return runs


def _summary_row(run: SweepRun, metrics: RunMetrics | None, ev, error: str | None) -> dict:
    k = run.config.constraint
    row = {"run": run.name, "algorithm": run.config.algorithm, "r": k.r, "c": k.c, "cl": k.cl,
           "seed": run.config.training.seed, "iterations": "", "samples": "", "samples_to_80": "",
           "final_success_rate": "", "trailing_jc": "", "eval_success_rate": "",
           "eval_avg_violations": "", "error": error or ""}
    if metrics is not None and metrics.rows:
        row.update(iterations=len(metrics.rows) - 1, samples=metrics.rows[-1]["samples"],
                   samples_to_80=metrics.samples_to_success(0.8),
                   final_success_rate=metrics.rows[-1]["success_rate"],
                   trailing_jc=metrics.trailing_mean("jc"))
    if ev is not None:
        row.update(eval_success_rate=ev.success_rate, eval_avg_violations=ev.avg_violations)
    return row


def plot_overlays(result: SweepResult, out_dir) -> list[Path]:
    """Success rate and average violations against cumulative samples, one line per run."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = []
    for column, label in (("success_rate", "success rate"), ("avg_violations", "average violations")):
        fig, ax = plt.subplots(figsize=(7, 4.5))
        for name, metrics in result.metrics.items():
            if metrics.rows:
                ax.plot(metrics.column("samples"), metrics.column(column), label=name, lw=1.2)
        ax.set_xlabel("samples")
        ax.set_ylabel(label)
        ax.set_title(f"experiment {result.experiment}: {label}")
        ax.legend(fontsize=7)
        fig.tight_layout()
        path = Path(out_dir) / f"{column}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)
    return paths


def run_sweep(experiment: int, out_dir=None, base: ExperimentConfig = ExperimentConfig(),
              seeds: Sequence[int] = (0,), plots: bool = True) -> SweepResult:
    """Run every configuration of ``experiment``; a failing run is recorded and skipped."""
    from .rollout import evaluate

    result = SweepResult(experiment, sweep_configs(experiment, base, seeds))
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    rows = []
    for run in result.runs:
        metrics, ev, error = None, None, None
        try:
            metrics = train(run.config)
            if metrics.error:
                error = metrics.error
            if run.config.training.eval_rollouts > 0:
                ev = evaluate(metrics.policy, run.config.training.eval_rollouts, run.config.constraint,
                              run.config.env, run.config.training.seed)
        except Exception as exc:  # a broken run must not stop the sweep
            error = f"{type(exc).__name__}: {exc}"
            log.error("run %s failed:\n%s", run.name, traceback.format_exc())
        if metrics is not None:
            result.metrics[run.name] = metrics
        if ev is not None:
            result.evals[run.name] = ev
        if error:
            result.failures[run.name] = error
        if out is not None and metrics is not None:
            _write_run(out / run.name, run.config, metrics, ev)
        rows.append(_summary_row(run, metrics, ev, error))
        log.info("finished %s%s", run.name, f" (error: {error})" if error else "")
    if out is not None:
        write_csv(out / "summary.csv", SUMMARY_COLUMNS, rows)
        if plots and result.metrics:
            plot_overlays(result, out)
    return result


def _write_run(run_dir: Path, cfg: ExperimentConfig, metrics: RunMetrics, ev) -> None:
    from ..nn import save_policy
    from .config import dump_config
    from .train import METRIC_COLUMNS, UPDATE_COLUMNS

    run_dir.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, run_dir / "config.yaml")
    write_csv(run_dir / "metrics.csv", METRIC_COLUMNS, metrics.rows)
    write_csv(run_dir / "updates.csv", UPDATE_COLUMNS, metrics.updates)
    if metrics.policy is not None:
        save_policy(run_dir / "policy.ckpt", metrics.policy)
    if ev is not None:
        write_csv(run_dir / "eval.csv", list(ev.row()), [ev.row()])


def median_by(result: SweepResult, key, value) -> dict:
    """Median of ``value(run_name)`` over seeds, grouped by ``key(config)``."""
    groups: dict = {}
    for run in result.runs:
        if run.name in result.failures:
            continue
        groups.setdefault(key(run.config), []).append(value(run.name))
    return {k: float(np.median(v)) for k, v in groups.items()}
