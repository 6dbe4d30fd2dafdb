"""Analytic planar rigid body with pseudo-normalized task rewards.

A single body moves in the x-z plane with pitch: three actuators apply
horizontal force, vertical force, and torque. Integration is
semi-implicit Euler; the ground clamps p_z at zero. Rewards are the
family deviation scaled by the reset-time normalizer d0, so every
episode starts at reward -1 (unless the normalizer was floored) and 0
is the optimum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from taskmix.envs.tasks import TaskSpec, deviation

D0_FLOOR = 0.1


@dataclass
class BodyState:
    p_x: float
    p_z: float
    theta: float  # pitch, unwrapped so flips accumulate angle
    v_x: float
    v_z: float
    omega: float


class PlanarEnv:
    obs_dim = 7
    action_dim = 3

    def __init__(self, episode_cap: int = 200, dt: float = 0.05,
                 force_scale: tuple[float, float, float] = (10.0, 15.0, 5.0),
                 gravity: float = 9.81):
        self.episode_cap = int(episode_cap)
        self.dt = float(dt)
        self.force_scale = tuple(float(f) for f in force_scale)
        self.gravity = float(gravity)
        self.task: TaskSpec | None = None
        self.state: BodyState | None = None
        self.d0 = 1.0
        self.steps = 0
        self.clip_warnings = 0

    def observe(self) -> np.ndarray:
        s = self.state
        return np.array([s.p_x, s.p_z, np.sin(s.theta), np.cos(s.theta),
                         s.v_x, s.v_z, s.omega])

    def reward_for_state(self, state: BodyState) -> float:
        return -deviation(self.task, state) / self.d0

    def _rescale(self) -> None:
        self.d0 = max(deviation(self.task, self.state), D0_FLOOR)

    def reset(self, task: TaskSpec, rng: np.random.Generator) -> np.ndarray:
        jitter = rng.uniform(-0.01, 0.01, size=6)
        self.task = task
        self.state = BodyState(p_x=jitter[0], p_z=max(jitter[1], 0.0),
                               theta=jitter[2], v_x=jitter[3], v_z=jitter[4],
                               omega=jitter[5])
        self.steps = 0
        self._rescale()
        return self.observe()

    def set_task(self, task: TaskSpec) -> None:
        """Mid-episode switch: state persists, normalizer recomputed."""
        self.task = task
        self._rescale()

    def step(self, action: np.ndarray):
        a = np.asarray(action, dtype=np.float64)
        if np.any(a < -1.0) or np.any(a > 1.0):
            self.clip_warnings += 1
            a = np.clip(a, -1.0, 1.0)
        s = self.state
        fx, fz, ft = self.force_scale
        s.v_x += self.dt * fx * a[0]
        s.v_z += self.dt * (fz * a[1] - self.gravity)
        s.omega += self.dt * ft * a[2]
        s.p_x += self.dt * s.v_x
        s.p_z += self.dt * s.v_z
        s.theta += self.dt * s.omega
        if s.p_z <= 0.0:
            s.p_z = 0.0
            s.v_z = max(s.v_z, 0.0)
        self.steps += 1
        reward = self.reward_for_state(s)
        done = self.steps >= self.episode_cap
        return self.observe(), reward, done
