"""Kinematic point-grasper stand-in for the object relocation task.

A hand point moves in 3-D with a speed limit, latches onto a point object
when commanded close enough, and carries it to an elevated goal. The
cylindrical boundary is charged on the hand position during the approach
phase (until the object is grasped).

The object-goal distance is penalized on every step, not only after the
grasp. Before the grasp it is a constant, so picking the object up never
makes the per-step reward worse.

Observation layout (13 values)::

    [0:3]   hand position
    [3]     grasp flag (0 or 1)
    [4:7]   hand - object
    [7:10]  hand - goal
    [10:13] object - goal

Action layout (4 values): a velocity command in units of ``max_speed``
(norms above 1 are scaled down to 1) and a grasp command (engages when > 0).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .geometry import ConstraintConfig, CylinderConstraint, evaluate

OBS_DIM = 13
ACT_DIM = 4


@dataclass(frozen=True)
class EnvConfig:
    home: tuple[float, float, float] = (0.0, 0.0, 0.2)
    object_jitter: float = 0.15
    goal_jitter: float = 0.15
    goal_z: tuple[float, float] = (0.15, 0.25)
    workspace_low: tuple[float, float, float] = (-0.5, -0.5, 0.0)
    workspace_high: tuple[float, float, float] = (0.5, 0.5, 0.6)
    grasp_radius: float = 0.035
    goal_radius: float = 0.05
    lift_height: float = 0.02
    max_speed: float = 0.05
    horizon: int = 100
    w1: float = 0.1
    w2: float = 0.5
    lift_bonus: float = 1.0
    proximity_bonus: float = 10.0

    def reward_bound(self) -> float:
        """Upper bound on |reward| for any single step.

        Every position stays inside the workspace box, so each distance term is
        at most the box diagonal. The lift bonus is paid once per episode, the
        first time the grasped object rises ``lift_height`` above the table.
        """
        diag = float(np.linalg.norm(np.subtract(self.workspace_high, self.workspace_low)))
        return (self.w1 + self.w2) * diag + self.lift_bonus + self.proximity_bonus


@dataclass(frozen=True, eq=False)
class EnvState:
    hand: np.ndarray
    object: np.ndarray
    goal: np.ndarray
    grasped: bool = False
    step: int = 0
    lifted: bool = False


@dataclass(frozen=True)
class StepInfo:
    violations: int
    success: bool
    d: float = float("nan")
    t: float = float("nan")


@dataclass(frozen=True, eq=False)
class StepResult:
    obs: np.ndarray
    reward: float
    cost: float
    done: bool
    info: StepInfo
    state: EnvState = field(repr=False, default=None)


class TerminalStateError(RuntimeError):
    pass


def observe(state: EnvState) -> np.ndarray:
    return np.concatenate([
        state.hand,
        [1.0 if state.grasped else 0.0],
        state.hand - state.object,
        state.hand - state.goal,
        state.object - state.goal,
    ])


def success_criterion(state: EnvState, cfg: EnvConfig = EnvConfig()) -> bool:
    return bool(state.grasped and np.linalg.norm(state.object - state.goal) < cfg.goal_radius)


def is_terminal(state: EnvState, cfg: EnvConfig = EnvConfig()) -> bool:
    return state.step >= cfg.horizon or success_criterion(state, cfg)


def initial_state(seed, cfg: EnvConfig = EnvConfig()) -> EnvState:
    rng = np.random.default_rng(seed)
    j, g = cfg.object_jitter, cfg.goal_jitter
    obj = np.array([rng.uniform(-j, j), rng.uniform(-j, j), cfg.workspace_low[2]])
    goal = np.array([rng.uniform(-g, g), rng.uniform(-g, g), rng.uniform(*cfg.goal_z)])
    return EnvState(np.array(cfg.home, dtype=float), obj, goal)


def displacement(action, cfg: EnvConfig) -> np.ndarray:
    v = np.asarray(action, dtype=float)[:3]
    norm = float(np.linalg.norm(v))
    if norm > 1.0:
        v = v / norm
    return cfg.max_speed * v


def transition(state: EnvState, action, cons: CylinderConstraint,
               cfg: EnvConfig = EnvConfig()) -> StepResult:
    """Advance one step; the cost channel is ``geometry.evaluate`` on the new hand position."""
    if is_terminal(state, cfg):
        raise TerminalStateError(f"episode already finished at step {state.step}")
    action = np.asarray(action, dtype=float)
    if action.shape != (ACT_DIM,) or not np.all(np.isfinite(action)):
        raise ValueError(f"action must be {ACT_DIM} finite values, got {action!r}")

    hand = np.clip(state.hand + displacement(action, cfg), cfg.workspace_low, cfg.workspace_high)
    grasped = state.grasped or (
        action[3] > 0 and np.linalg.norm(hand - state.object) <= cfg.grasp_radius
    )
    obj = hand.copy() if grasped else state.object
    lifted = bool(grasped and obj[2] > cfg.workspace_low[2] + cfg.lift_height)
    new = EnvState(hand, obj, state.goal, bool(grasped), state.step + 1, state.lifted or lifted)

    if state.grasped:
        cost, violations, d, t = 0.0, 0, float("nan"), float("nan")
    else:
        res = evaluate(cons, hand)
        cost, violations, d, t = res.cost, res.count, res.d, res.t

    success = success_criterion(new, cfg)
    to_goal = float(np.linalg.norm(obj - state.goal))
    reward = -cfg.w2 * to_goal
    if grasped:
        if lifted and not state.lifted:
            reward += cfg.lift_bonus
        if to_goal < cfg.goal_radius:
            reward += cfg.proximity_bonus
    else:
        reward -= cfg.w1 * float(np.linalg.norm(hand - obj))
    done = success or new.step >= cfg.horizon
    return StepResult(observe(new), reward, cost, done, StepInfo(violations, success, d, t), new)


class RelocationEnv:
    """Stateful wrapper with a gym-like ``reset``/``step`` interface."""

    def __init__(self, cfg: EnvConfig = EnvConfig(), constraint_cfg: ConstraintConfig = ConstraintConfig()):
        self.cfg = cfg
        self.constraint_cfg = constraint_cfg
        self.state: EnvState | None = None
        self.constraint: CylinderConstraint | None = None

    def horizon(self) -> int:
        return self.cfg.horizon

    def reset(self, seed, constraint_cfg: ConstraintConfig | None = None):
        if constraint_cfg is not None:
            self.constraint_cfg = constraint_cfg
        self.state = initial_state(seed, self.cfg)
        self.constraint = self.constraint_cfg.bind(self.state.hand, self.state.object)
        return observe(self.state), self.constraint

    def step(self, action) -> StepResult:
        if self.state is None:
            raise TerminalStateError("reset() must be called before step()")
        result = transition(self.state, action, self.constraint, self.cfg)
        self.state = result.state
        return result

    def with_config(self, **overrides) -> "RelocationEnv":
        return RelocationEnv(replace(self.cfg, **overrides), self.constraint_cfg)


TRAJECTORY_COLUMNS = ("step", "hand_x", "hand_y", "hand_z", "object_x", "object_y", "object_z",
                      "d", "t", "cost", "reward")


def write_trajectory_csv(path, results: list[StepResult]) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_COLUMNS)
        for res in results:
            s = res.state
            writer.writerow([s.step, *map(repr, map(float, s.hand)), *map(repr, map(float, s.object)),
                             repr(res.info.d), repr(res.info.t), repr(res.cost), repr(res.reward)])
