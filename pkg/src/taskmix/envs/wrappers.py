"""Non-stationary episode schedules and continual-learning task access."""

from __future__ import annotations

import math

from taskmix.envs.tasks import TaskSpec
from taskmix.errors import ConfigurationError


class NonStationaryEnv:
    """Runs one episode through a schedule of task switches.

    The body state is never reset at a switch; only the active task and
    its reward normalizer change. The episode runs exactly the summed
    schedule duration (the wrapped env's own cap is ignored).
    """

    def __init__(self, env, schedule: list[tuple[TaskSpec, int]]):
        if not schedule:
            raise ConfigurationError("non-stationary schedule must be nonempty")
        for _, duration in schedule:
            if duration < 1:
                raise ConfigurationError("schedule durations must be >= 1")
        self.env = env
        self.schedule = list(schedule)
        self.total_steps = sum(d for _, d in schedule)
        self._boundaries = []
        acc = 0
        for spec, duration in schedule:
            self._boundaries.append((acc, spec))
            acc += duration
        self.steps = 0

    @property
    def obs_dim(self):
        return self.env.obs_dim

    @property
    def action_dim(self):
        return self.env.action_dim

    @property
    def task(self):
        return self.env.task

    def reset(self, rng):
        self.steps = 0
        obs = self.env.reset(self._boundaries[0][1], rng)
        self._next_switch = 1
        return obs

    def step(self, action):
        if (self._next_switch < len(self._boundaries)
                and self.steps == self._boundaries[self._next_switch][0]):
            self.env.set_task(self._boundaries[self._next_switch][1])
            self._next_switch += 1
        obs, reward, _ = self.env.step(action)
        self.steps += 1
        done = self.steps >= self.total_steps
        return obs, reward, done


def continual_access(setting: str, progress: float, total_bases: int) -> set[int]:
    """Which base tasks (1-based indices) may be collected at `progress`.

    linear: every base unlocked so far; cut: only the newest one.
    """
    if not 0.0 <= progress <= 1.0:
        raise ConfigurationError(f"progress must be in [0, 1], got {progress}")
    newest = min(total_bases, math.floor(progress * total_bases) + 1)
    if setting == "linear":
        return set(range(1, newest + 1))
    if setting == "cut":
        return {newest}
    raise ConfigurationError(f"unknown continual setting '{setting}'")
