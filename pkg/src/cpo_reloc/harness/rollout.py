"""Episode collection and roll-out evaluation.

Each episode draws its own generators from ``(seed, iteration, episode)``, and
results are merged in episode order, so a batch does not depend on how many
workers collected it.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..env import EnvConfig, initial_state, observe, transition
from ..geometry import ConstraintConfig
from ..nn import GaussianPolicy, log_prob

EVAL_STREAM = 1_000_003


@dataclass
class Episode:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    costs: np.ndarray
    violations: int
    success: bool
    logps: np.ndarray | None = None

    def __len__(self):
        return len(self.rewards)


def episode_seeds(seed: int, iteration: int, episode: int):
    """(environment reset seed, action-noise generator) for one episode."""
    env_seed = np.random.SeedSequence([seed, iteration, episode, 0])
    noise = np.random.default_rng([seed, iteration, episode, 1])
    return env_seed, noise


def run_episode(actor: Callable[[np.ndarray], np.ndarray], env_seed, env_cfg: EnvConfig,
                cons_cfg: ConstraintConfig) -> Episode:
    state = initial_state(env_seed, env_cfg)
    cons = cons_cfg.bind(state.hand, state.object)
    obs = observe(state)
    observations, actions, rewards, costs = [], [], [], []
    violations = 0
    success = False
    while True:
        action = np.asarray(actor(obs), dtype=float)
        res = transition(state, action, cons, env_cfg)
        observations.append(obs)
        actions.append(action)
        rewards.append(res.reward)
        costs.append(res.cost)
        violations += res.info.violations
        state, obs = res.state, res.obs
        if res.done:
            success = res.info.success
            break
    return Episode(np.array(observations), np.array(actions), np.array(rewards),
                   np.array(costs), violations, success)


def _sampled_episode(policy: GaussianPolicy, env_cfg, cons_cfg, seed, iteration, index) -> Episode:
    env_seed, noise = episode_seeds(seed, iteration, index)
    mean = policy.mean
    std = policy.std

    def actor(obs):
        mu = mean(obs)
        return mu + std * noise.standard_normal(mu.shape)

    ep = run_episode(actor, env_seed, env_cfg, cons_cfg)
    ep.logps = np.asarray(log_prob(policy, ep.obs, ep.actions))
    return ep


def collect(policy: GaussianPolicy, env_cfg: EnvConfig, cons_cfg: ConstraintConfig,
            seed: int, iteration: int, n_episodes: int, workers: int = 1) -> list[Episode]:
    def one(i):
        return _sampled_episode(policy, env_cfg, cons_cfg, seed, iteration, i)

    if workers <= 1:
        return [one(i) for i in range(n_episodes)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, range(n_episodes)))


@dataclass(frozen=True)
class EvalResult:
    n: int
    success_rate: float
    avg_violations: float
    mean_return: float
    mean_length: float

    def row(self) -> dict:
        return {"rollouts": self.n, "success_rate": self.success_rate,
                "avg_violations": self.avg_violations, "mean_return": self.mean_return,
                "mean_length": self.mean_length}


def as_actor(policy) -> Callable[[np.ndarray], np.ndarray]:
    """Deterministic actor: the policy mean, or ``policy`` itself if it is a plain callable."""
    if isinstance(policy, GaussianPolicy):
        return policy.mean
    return policy


def evaluate(policy, n: int = 500, constraint: ConstraintConfig = ConstraintConfig(),
             env_cfg: EnvConfig = EnvConfig(), seed: int = 0) -> EvalResult:
    """Roll out ``n`` episodes with the deterministic mean action."""
    actor = as_actor(policy)
    episodes: Sequence[Episode] = [
        run_episode(actor, np.random.SeedSequence([seed, EVAL_STREAM, i]), env_cfg, constraint)
        for i in range(n)
    ]
    return EvalResult(
        n=n,
        success_rate=float(np.mean([ep.success for ep in episodes])),
        avg_violations=float(np.mean([ep.violations for ep in episodes])),
        mean_return=float(np.mean([ep.rewards.sum() for ep in episodes])),
        mean_length=float(np.mean([len(ep) for ep in episodes])),
    )
