"""Task families: target ranges, reward deviations, and tracked values.

Two benchmarks share this registry. The planar rigid body has eight
families over horizontal/vertical motion and pitch; the point benchmark
has three (run / goal on a horizontal axis, jump on z). Rewards are
always -|deviation| scaled by the reset normalizer, so 0 is the best
attainable value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from taskmix.errors import ConfigurationError


@dataclass(frozen=True)
class TaskSpec:
    """One concrete MDP: a family plus its target parameter.

    `axis` selects the horizontal axis for the directional point
    families (0 = x, 1 = y); planar families ignore it.
    """
    base: str
    target: float
    axis: int = 0


# family -> (low, high) of the target parameter
PLANAR_RANGES: dict[str, tuple[float, float]] = {
    "RunForward": (1.0, 5.0),
    "RunBackward": (-5.0, -1.0),
    "GoalFront": (5.0, 25.0),
    "GoalBack": (-25.0, -5.0),
    "FrontStand": (math.pi / 6.0, math.pi / 2.0),
    "BackStand": (-math.pi / 2.0, -math.pi / 6.0),
    "FrontFlip": (2.0 * math.pi, 4.0 * math.pi),
    "Jump": (1.5, 3.0),
}

POINT_RANGES: dict[str, tuple[float, float]] = {
    "PointRun": (1.0, 3.0),
    "PointGoal": (5.0, 15.0),
    "PointJump": (0.5, 2.0),
}

# directional point families sample a sign and an axis; jump is +z only
_POINT_DIRECTIONAL = ("PointRun", "PointGoal")

ALL_RANGES = {**PLANAR_RANGES, **POINT_RANGES}


def target_range(base: str) -> tuple[float, float]:
    try:
        return ALL_RANGES[base]
    except KeyError:
        raise ConfigurationError(f"unknown base task '{base}'") from None


def sample_task(base: str, rng: np.random.Generator) -> TaskSpec:
    """Draw a task uniformly from the family's target range."""
    lo, hi = target_range(base)
    target = float(rng.uniform(lo, hi))
    axis = 0
    if base in _POINT_DIRECTIONAL:
        direction = rng.integers(0, 4)  # +x, -x, +y, -y
        axis = int(direction) // 2
        if direction % 2 == 1:
            target = -target
    return TaskSpec(base, target, axis)


def tracked_value(spec: TaskSpec, state) -> float:
    """The quantity the family's reward compares against the target."""
    base = spec.base
    if base in ("RunForward", "RunBackward"):
        return state.v_x
    if base in ("GoalFront", "GoalBack"):
        return state.p_x
    if base in ("FrontStand", "BackStand"):
        return state.theta
    if base == "FrontFlip":
        return state.omega
    if base == "Jump":
        return abs(state.v_z)
    if base in ("PointRun",):
        return state.v[spec.axis]
    if base in ("PointGoal",):
        return state.p[spec.axis]
    if base == "PointJump":
        return state.v[2]
    raise ConfigurationError(f"unknown base task '{base}'")


def deviation(spec: TaskSpec, state) -> float:
    return abs(spec.target - tracked_value(spec, state))
