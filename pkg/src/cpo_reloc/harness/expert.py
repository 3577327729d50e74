"""Scripted demonstrator standing in for recorded human demonstrations.

Before the grasp it heads straight for the object, so it never leaves the
axis of the boundary cylinder; afterwards it heads straight for the goal.
The grasp command is always on (it only latches within the grasp radius).
"""

from __future__ import annotations

import numpy as np

from ..env import ACT_DIM, EnvConfig, EnvState, observe


def expert_action(obs, cfg: EnvConfig = EnvConfig()) -> np.ndarray:
    obs = np.asarray(obs, dtype=float)
    target = -obs[7:10] if obs[3] > 0.5 else -obs[4:7]
    dist = float(np.linalg.norm(target))
    action = np.zeros(ACT_DIM)
    action[:3] = target / max(dist, cfg.max_speed)
    action[3] = 1.0
    return action


def scripted_expert(state: EnvState, cfg: EnvConfig = EnvConfig()) -> np.ndarray:
    return expert_action(observe(state), cfg)
