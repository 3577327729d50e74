"""Cylindrical boundary around the segment from the hand's start to the object.

A hand position ``x`` satisfies the boundary when its perpendicular distance to
the axis line through ``x_h`` and ``x_b`` is at most ``r`` and its normalized
axial coordinate ``t`` (0 at ``x_h``, 1 at ``x_b``) lies in ``[t_min, t_max]``.
Each violated inequality costs ``c``; equality counts as satisfied.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

AXIS_EPS = 1e-12


class DegenerateAxisError(ValueError):
    pass


def _point(x) -> np.ndarray:
    p = np.asarray(x, dtype=float).reshape(3)
    if not np.all(np.isfinite(p)):
        raise ValueError(f"point must be finite, got {p}")
    return p


def _check_params(r, t_min, t_max, c, cl):
    if not r > 0:
        raise ValueError(f"radius must be positive, got {r}")
    if not t_min < t_max:
        raise ValueError(f"need t_min < t_max, got [{t_min}, {t_max}]")
    if not (c >= 0 and cl >= 0):
        raise ValueError("penalty cost and cost limit must be non-negative")


@dataclass(frozen=True, eq=False)
class CylinderConstraint:
    x_h: np.ndarray
    x_b: np.ndarray
    r: float
    t_min: float = -0.1
    t_max: float = 1.1
    c: float = 0.01
    cl: float = 0.25

    def __post_init__(self):
        x_h, x_b = _point(self.x_h), _point(self.x_b)
        x_h.setflags(write=False)
        x_b.setflags(write=False)
        object.__setattr__(self, "x_h", x_h)
        object.__setattr__(self, "x_b", x_b)
        if np.linalg.norm(x_b - x_h) < AXIS_EPS:
            raise DegenerateAxisError("hand and object anchors coincide; the axis is undefined")
        _check_params(self.r, self.t_min, self.t_max, self.c, self.cl)

    @property
    def axis(self) -> np.ndarray:
        return self.x_b - self.x_h


@dataclass(frozen=True)
class ConstraintConfig:
    """Boundary parameters before the anchors are known (they come from an episode reset)."""

    r: float = 0.05
    c: float = 0.01
    cl: float = 0.25
    t_min: float = -0.1
    t_max: float = 1.1

    def __post_init__(self):
        _check_params(self.r, self.t_min, self.t_max, self.c, self.cl)

    def bind(self, x_h, x_b) -> CylinderConstraint:
        return CylinderConstraint(x_h, x_b, self.r, self.t_min, self.t_max, self.c, self.cl)


@dataclass(frozen=True)
class ViolationResult:
    d: float
    t: float
    radial_violated: bool
    axial_violated: bool
    cost: float

    @property
    def count(self) -> int:
        return int(self.radial_violated) + int(self.axial_violated)


def axial_parameter(cons: CylinderConstraint, x) -> float:
    axis = cons.axis
    return float(np.dot(_point(x) - cons.x_h, axis) / np.dot(axis, axis))


def _cross(a, b):
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


def perpendicular_distance(cons: CylinderConstraint, x) -> float:
    axis = cons.axis
    return float(np.linalg.norm(_cross(axis, cons.x_h - _point(x))) / np.linalg.norm(axis))


def evaluate(cons: CylinderConstraint, x) -> ViolationResult:
    d = perpendicular_distance(cons, x)
    t = axial_parameter(cons, x)
    radial = d > cons.r
    axial = t < cons.t_min or t > cons.t_max
    return ViolationResult(d, t, radial, axial, cons.c * (int(radial) + int(axial)))


def trajectory_cost(cons: CylinderConstraint, positions: Iterable, gamma_c: float) -> tuple[float, int]:
    """Discounted penalty and total violated-inequality count along ``positions``."""
    if not 0 < gamma_c <= 1:
        raise ValueError(f"gamma_c must be in (0, 1], got {gamma_c}")
    discounted, count, weight = 0.0, 0, 1.0
    for x in positions:
        res = evaluate(cons, x)
        discounted += weight * res.cost
        count += res.count
        weight *= gamma_c
    return discounted, count
