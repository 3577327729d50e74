"""On-policy training loop shared by CPO, TRPO and TRPO-RP.

Row ``k`` of the metrics describes the batch collected with the policy as it
stood at the start of iteration ``k``; that batch then drives update ``k``.
Row 0 therefore evaluates the behavior-cloned policy, and a run with
``iterations = N`` has ``N + 1`` rows and ``N`` updates.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..estimation import Trajectory, build_batch, penalized
from ..nn import GaussianPolicy, MlpSpec, save_checkpoint, save_policy
from ..env import ACT_DIM, OBS_DIM
from ..optim import CostConstraintCfg, OptimizerAbort, UpdateReport, cpo_step, trpo_rp_step, trpo_step
from .config import ExperimentConfig, dump_config
from .learning import ValueFunction, behavior_clone, generate_demos
from .rollout import Episode, collect, evaluate

log = logging.getLogger(__name__)

POLICY_SPEC = MlpSpec(OBS_DIM, (32, 32), ACT_DIM, "tanh")

METRIC_COLUMNS = ("iteration", "samples", "episodes", "mean_return", "success_rate",
                  "avg_violations", "jc", "mean_length")
UPDATE_COLUMNS = ("iteration", "algorithm", "step_kind", "case", "surrogate_before", "surrogate_after",
                  "kl_after", "expected_cost_before", "expected_cost_after_estimate", "step_norm",
                  "feasible_start")


@dataclass
class RunMetrics:
    rows: list[dict] = field(default_factory=list)
    updates: list[dict] = field(default_factory=list)
    policy: GaussianPolicy | None = None
    error: str | None = None

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.rows], dtype=float)

    def samples_to_success(self, threshold: float) -> float:
        """Cumulative samples at the first row reaching ``threshold`` success (inf if never)."""
        for row in self.rows:
            if row["success_rate"] >= threshold:
                return float(row["samples"])
        return float("inf")

    def trailing_mean(self, name: str, k: int = 10) -> float:
        return float(np.mean(self.column(name)[-k:]))


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, columns, rows) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def _trajectories(episodes: list[Episode], value_fn: ValueFunction, cost_fn: ValueFunction | None):
    out = []
    for ep in episodes:
        vp = value_fn.predict(ep.obs)
        cvp = cost_fn.predict(ep.obs) if cost_fn is not None else np.zeros(len(ep))
        out.append(Trajectory(ep.obs, ep.actions, ep.rewards, ep.costs, ep.logps, vp, cvp,
                              True, ep.violations, ep.success))
    return out


def pretrained_policy(cfg: ExperimentConfig) -> GaussianPolicy:
    seed = cfg.training.seed
    policy = GaussianPolicy.initial(POLICY_SPEC, seed)
    if cfg.bc.num_demos > 0 and cfg.bc.epochs > 0:
        demos = generate_demos(cfg.bc.num_demos, cfg.bc.demo_seed, cfg.env, cfg.constraint)
        policy = policy.with_params(behavior_clone(policy, demos, cfg.bc.lr, cfg.bc.epochs,
                                                   cfg.bc.batch_size, seed))
    return policy


def train(cfg: ExperimentConfig, out_dir=None, policy: GaussianPolicy | None = None) -> RunMetrics:
    tr = cfg.training
    seed = tr.seed
    if policy is None:
        policy = pretrained_policy(cfg)
    value_fn = ValueFunction(seed + 1, lr=tr.value_lr)
    cost_fn = ValueFunction(seed + 2, lr=tr.value_lr) if cfg.algorithm == "cpo" else None
    cost_cfg = CostConstraintCfg(cfg.constraint.cl, cfg.gamma_c)
    metrics = RunMetrics(policy=policy)
    samples = 0

    for it in range(tr.iterations + 1):
        episodes = collect(policy, cfg.env, cfg.constraint, seed, it, tr.episodes_per_iteration, tr.workers)
        trajs = _trajectories(episodes, value_fn, cost_fn)
        if cfg.algorithm == "trpo_rp":
            trajs = [penalized(t) for t in trajs]
        batch = build_batch(trajs, cfg.gamma, cfg.gamma_c, cfg.gae_lambda)
        samples += len(batch)
        metrics.rows.append({
            "iteration": it,
            "samples": samples,
            "episodes": len(episodes),
            "mean_return": float(np.mean([ep.rewards.sum() for ep in episodes])),
            "success_rate": float(np.mean([ep.success for ep in episodes])),
            "avg_violations": float(np.mean([ep.violations for ep in episodes])),
            "jc": batch.jc,
            "mean_length": float(np.mean([len(ep) for ep in episodes])),
        })
        if it == tr.iterations:
            break

        try:
            if cfg.algorithm == "cpo":
                params, report = cpo_step(policy, batch, cfg.trust_region, cost_cfg)
            elif cfg.algorithm == "trpo_rp":
                params, report = trpo_rp_step(policy, batch, cfg.trust_region)
            else:
                params, report = trpo_step(policy, batch, cfg.trust_region)
        except (OptimizerAbort, FloatingPointError) as exc:
            metrics.error = f"iteration {it}: {exc}"
            log.error("optimizer aborted at iteration %d: %s", it, exc)
            break
        metrics.updates.append({"iteration": it, **report.row()})
        policy = policy.with_params(params)
        metrics.policy = policy

        rng = np.random.default_rng([seed, it, 2])
        value_fn.fit(batch.obs, batch.reward_returns, rng, tr.value_epochs, tr.value_batch_size)
        if cost_fn is not None:
            cost_fn.fit(batch.obs, batch.cost_returns, rng, tr.value_epochs, tr.value_batch_size)
        log.info("iter %d samples %d success %.2f violations %.2f J_C %.4f step %s",
                 it, samples, metrics.rows[-1]["success_rate"], metrics.rows[-1]["avg_violations"],
                 batch.jc, report.step_kind)

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        dump_config(cfg, out / "config.yaml")
        write_csv(out / "metrics.csv", METRIC_COLUMNS, metrics.rows)
        write_csv(out / "updates.csv", UPDATE_COLUMNS, metrics.updates)
        save_policy(out / "policy.ckpt", policy)
        save_checkpoint(out / "value.ckpt", value_fn.spec, value_fn.params)
        if cost_fn is not None:
            save_checkpoint(out / "cost_value.ckpt", cost_fn.spec, cost_fn.params)
        if tr.eval_rollouts > 0:
            result = evaluate(policy, tr.eval_rollouts, cfg.constraint, cfg.env, seed)
            write_csv(out / "eval.csv", list(result.row()), [result.row()])
    return metrics
