"""Point-mass benchmark: three task families over a 3-D particle.

Same integrator and normalization contract as the planar body, without
rotation. Directional families (run, goal) act along x or y per the
TaskSpec axis; jump targets vertical velocity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from taskmix.envs.planar import D0_FLOOR
from taskmix.envs.tasks import TaskSpec, deviation


@dataclass
class PointState:
    p: np.ndarray  # (3,)
    v: np.ndarray  # (3,)


class PointEnv:
    obs_dim = 6
    action_dim = 3

    def __init__(self, episode_cap: int = 200, dt: float = 0.05,
                 force_scale: tuple[float, float, float] = (10.0, 10.0, 15.0),
                 gravity: float = 9.81):
        self.episode_cap = int(episode_cap)
        self.dt = float(dt)
        self.force_scale = tuple(float(f) for f in force_scale)
        self.gravity = float(gravity)
        self.task: TaskSpec | None = None
        self.state: PointState | None = None
        self.d0 = 1.0
        self.steps = 0
        self.clip_warnings = 0

    def observe(self) -> np.ndarray:
        return np.concatenate([self.state.p, self.state.v])

    def reward_for_state(self, state: PointState) -> float:
        return -deviation(self.task, state) / self.d0

    def _rescale(self) -> None:
        self.d0 = max(deviation(self.task, self.state), D0_FLOOR)

    def reset(self, task: TaskSpec, rng: np.random.Generator) -> np.ndarray:
        p = rng.uniform(-0.01, 0.01, size=3)
        v = rng.uniform(-0.01, 0.01, size=3)
        p[2] = max(p[2], 0.0)
        self.task = task
        self.state = PointState(p=p, v=v)
        self.steps = 0
        self._rescale()
        return self.observe()

    def set_task(self, task: TaskSpec) -> None:
        self.task = task
        self._rescale()

    def step(self, action: np.ndarray):
        a = np.asarray(action, dtype=np.float64)
        if np.any(a < -1.0) or np.any(a > 1.0):
            self.clip_warnings += 1
            a = np.clip(a, -1.0, 1.0)
        s = self.state
        scale = self.force_scale
        s.v[0] += self.dt * scale[0] * a[0]
        s.v[1] += self.dt * scale[1] * a[1]
        s.v[2] += self.dt * (scale[2] * a[2] - self.gravity)
        s.p += self.dt * s.v
        if s.p[2] <= 0.0:
            s.p[2] = 0.0
            s.v[2] = max(s.v[2], 0.0)
        self.steps += 1
        reward = self.reward_for_state(s)
        done = self.steps >= self.episode_cap
        return self.observe(), reward, done
