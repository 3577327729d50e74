"""Returns, GAE and batching of on-policy episodes."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np


@dataclass(frozen=True, eq=False)
class Trajectory:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    costs: np.ndarray
    logps: np.ndarray
    value_preds: np.ndarray
    cost_value_preds: np.ndarray
    done: bool = True
    violations: int = 0
    success: bool = False

    def __post_init__(self):
        for name in ("obs", "actions", "rewards", "costs", "logps", "value_preds", "cost_value_preds"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        n = len(self.rewards)
        if n < 1:
            raise ValueError("trajectory must contain at least one step")
        lengths = {len(getattr(self, k)) for k in
                   ("obs", "actions", "costs", "logps", "value_preds", "cost_value_preds")}
        if lengths != {n}:
            raise ValueError(f"trajectory fields have mismatched lengths {lengths | {n}}")
        if not np.all(np.isfinite(self.logps)):
            raise ValueError("behavior log-densities must be finite")

    def __len__(self):
        return len(self.rewards)


def discounted_returns(rewards, gamma: float) -> np.ndarray:
    if not 0 < gamma <= 1:
        raise ValueError(f"gamma must be in (0, 1], got {gamma}")
    rewards = np.asarray(rewards, dtype=float)
    out = np.zeros_like(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def gae(signal, value_preds, gamma: float, lam: float) -> np.ndarray:
    """Generalized advantage estimates; the value after the last step is taken as 0."""
    signal = np.asarray(signal, dtype=float)
    values = np.asarray(value_preds, dtype=float)
    if signal.shape != values.shape:
        raise ValueError(f"length mismatch: {signal.shape} signals vs {values.shape} values")
    next_values = np.append(values[1:], 0.0)
    deltas = signal + gamma * next_values - values
    out = np.zeros_like(deltas)
    acc = 0.0
    for t in range(len(deltas) - 1, -1, -1):
        acc = deltas[t] + gamma * lam * acc
        out[t] = acc
    return out


def normalize(x: np.ndarray) -> np.ndarray:
    centered = x - x.mean()
    std = centered.std()
    if len(x) < 2 or std < 1e-12:
        return centered
    return centered / std


@dataclass(frozen=True, eq=False)
class EstimatedBatch:
    obs: np.ndarray
    actions: np.ndarray
    logps: np.ndarray
    advantages: np.ndarray
    cost_advantages: np.ndarray
    reward_returns: np.ndarray
    cost_returns: np.ndarray
    episode_costs: np.ndarray = field(repr=False)
    episode_starts: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.advantages)

    @property
    def jc(self) -> float:
        """Mean discounted episode cost of the behavior policy."""
        return float(np.mean(self.episode_costs))


def penalized(traj: Trajectory) -> Trajectory:
    """Same episode with the reward stream replaced by ``reward - cost``."""
    return replace(traj, rewards=traj.rewards - traj.costs)


def build_batch(trajectories: Sequence[Trajectory], gamma: float, gamma_c: float, lam: float) -> EstimatedBatch:
    if not trajectories:
        raise ValueError("need at least one trajectory")
    adv, cadv, rets, crets, starts = [], [], [], [], []
    offset = 0
    for tr in trajectories:
        adv.append(gae(tr.rewards, tr.value_preds, gamma, lam))
        cadv.append(gae(tr.costs, tr.cost_value_preds, gamma_c, lam))
        rets.append(discounted_returns(tr.rewards, gamma))
        crets.append(discounted_returns(tr.costs, gamma_c))
        starts.append(offset)
        offset += len(tr)
    cost_returns = np.concatenate(crets)
    starts = np.array(starts)
    return EstimatedBatch(
        obs=np.concatenate([tr.obs for tr in trajectories]),
        actions=np.concatenate([tr.actions for tr in trajectories]),
        logps=np.concatenate([tr.logps for tr in trajectories]),
        advantages=normalize(np.concatenate(adv)),
        cost_advantages=np.concatenate(cadv),
        reward_returns=np.concatenate(rets),
        cost_returns=cost_returns,
        episode_costs=cost_returns[starts],
        episode_starts=starts,
    )
