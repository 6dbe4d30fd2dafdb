"""Per-step tracking traces through stationary or switching schedules."""

from __future__ import annotations

import numpy as np
import yaml

from taskmix.envs.tasks import TaskSpec, tracked_value
from taskmix.envs.wrappers import NonStationaryEnv
from taskmix.errors import ConfigurationError
from taskmix.training.loop import make_env


def load_schedule(path) -> list[tuple[TaskSpec, int]]:
    """Schedule file: a YAML list of {base, target, steps[, axis]} entries."""
    with open(path) as f:
        doc = yaml.safe_load(f)
    if not isinstance(doc, list) or not doc:
        raise ConfigurationError(
            f"schedule file must be a nonempty YAML list: {path}")
    schedule = []
    for i, entry in enumerate(doc):
        if not isinstance(entry, dict):
            raise ConfigurationError(f"schedule entry {i} must be a mapping")
        missing = {"base", "target", "steps"} - set(entry)
        if missing:
            raise ConfigurationError(
                f"schedule entry {i} is missing keys {sorted(missing)}")
        spec = TaskSpec(str(entry["base"]), float(entry["target"]),
                        int(entry.get("axis", 0)))
        schedule.append((spec, int(entry["steps"])))
    return schedule


def run_trace(cfg, params, encoder, agent,
              schedule: list[tuple[TaskSpec, int]], rng) -> list[tuple]:
    """Roll one episode through the schedule without resets.

    Returns (step, tracked value, active target) rows; the value is the
    task family's controlled quantity after the step was taken.
    """
    env = NonStationaryEnv(make_env(cfg), schedule)
    obs = env.reset(rng)
    h = encoder.init_hidden(1)
    z = encoder.embed_hidden(params, h, mode="mean")
    rows = []
    for t in range(env.total_steps):
        action = agent.act(params, obs, z, mode="mean")[0]
        nxt, reward, _ = env.step(action)
        spec = env.task
        rows.append((t, float(tracked_value(spec, env.env.state)),
                     float(spec.target)))
        ctx = np.concatenate([obs, action, [reward], nxt])[None]
        h = encoder.step_hidden(params, ctx, h)
        z = encoder.embed_hidden(params, h, mode="mean")
        obs = nxt
    return rows


def write_trace_csv(rows: list[tuple], path) -> None:
    with open(path, "w") as f:
        f.write("step,value,target\n")
        for step, value, target in rows:
            f.write(f"{step},{value!r},{target!r}\n")
