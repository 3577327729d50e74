"""Supervised pieces of training: behavior cloning and value-function regression."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..env import EnvConfig, OBS_DIM
from ..geometry import ConstraintConfig
from ..nn import Adam, GaussianPolicy, MlpSpec, PolicyParams, gaussian_log_prob, init_params, mlp_apply
from .expert import expert_action
from .rollout import run_episode

VALUE_SPEC = MlpSpec(OBS_DIM, (128, 128), 1, "tanh")


@dataclass
class Demos:
    obs: np.ndarray
    actions: np.ndarray
    episode: np.ndarray

    def __len__(self):
        return len(self.obs)

    def split(self, n_train_episodes: int) -> tuple["Demos", "Demos"]:
        mask = self.episode < n_train_episodes
        return (Demos(self.obs[mask], self.actions[mask], self.episode[mask]),
                Demos(self.obs[~mask], self.actions[~mask], self.episode[~mask]))


def generate_demos(n: int, seed: int, env_cfg: EnvConfig = EnvConfig(),
                   constraint: ConstraintConfig = ConstraintConfig()) -> Demos:
    obs, actions, index = [], [], []
    for i in range(n):
        ep = run_episode(lambda o: expert_action(o, env_cfg),
                         np.random.SeedSequence([seed, i]), env_cfg, constraint)
        obs.append(ep.obs)
        actions.append(ep.actions)
        index.append(np.full(len(ep), i))
    return Demos(np.concatenate(obs), np.concatenate(actions), np.concatenate(index))


def demo_log_likelihood(policy: GaussianPolicy, demos: Demos) -> float:
    return float(np.mean(gaussian_log_prob(policy.spec, policy.params.flat, demos.obs, demos.actions)))


def behavior_clone(policy: GaussianPolicy, demos: Demos, lr: float = 0.001, epochs: int = 150,
                   batch_size: int = 64, seed: int = 0) -> PolicyParams:
    """Gradient ascent on the demo log-likelihood of the mean network.

    The log-std block is held at its current value, which makes the objective
    a scaled squared error on the mean.
    """
    if len(demos) == 0:
        raise ValueError("behavior cloning needs at least one demonstration step")
    spec = policy.spec
    flat = policy.params.flat.copy()
    n = spec.n_weights
    opt = Adam(flat.size, lr=lr)
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        order = rng.permutation(len(demos))
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            obs, act = demos.obs[idx], demos.actions[idx]
            loss, g = ad.value_and_grad(lambda w: -ad.vmean(gaussian_log_prob(spec, w, obs, act)), flat)
            if not np.isfinite(loss) or not np.all(np.isfinite(g)):
                raise FloatingPointError("behavior cloning diverged (non-finite loss)")
            g[n:] = 0.0
            flat = opt.step(flat, g)
    return PolicyParams(flat)


class ValueFunction:
    """MLP regressor ``obs -> scalar`` trained by Adam on squared error."""

    def __init__(self, seed: int, spec: MlpSpec = VALUE_SPEC, lr: float = 0.001):
        self.spec = spec
        self.params = init_params(spec, np.random.default_rng(seed))
        self.opt = Adam(len(self.params), lr=lr)

    def predict(self, obs) -> np.ndarray:
        return mlp_apply(self.spec, self.params.flat, np.asarray(obs, dtype=float))[..., 0]

    def loss(self, obs, targets) -> float:
        return float(np.mean((self.predict(obs) - targets) ** 2))

    def fit(self, obs, targets, rng: np.random.Generator, epochs: int = 5, batch_size: int = 64) -> float:
        spec = self.spec
        flat = self.params.flat.copy()
        targets = np.asarray(targets, dtype=float)
        for _ in range(epochs):
            order = rng.permutation(len(obs))
            for start in range(0, len(order), batch_size):
                idx = order[start:start + batch_size]
                x, y = obs[idx], targets[idx]
                _, g = ad.value_and_grad(lambda w: ad.vmean((mlp_apply(spec, w, x)[:, 0] - y) ** 2), flat)
                flat = self.opt.step(flat, g)
        self.params = PolicyParams(flat)
        return self.loss(obs, targets)
