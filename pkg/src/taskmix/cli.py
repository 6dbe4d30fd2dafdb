"""Command-line entry points: train, eval, trace, latent, plot."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import yaml

from taskmix.errors import ConfigurationError
from taskmix.nn.params import load_checkpoint
from taskmix.replay import EpisodeRecord, ReplayBuffer
from taskmix.training.config import (RunConfig, load_config, validate_config)
from taskmix.training.latent import export_latent
from taskmix.training.loop import (Trainer, build_networks, lockstep_rollout,
                                   make_env, make_rngs, meta_test_rollout,
                                   sample_task_set)
from taskmix.training.plotting import plot_file
from taskmix.training.trace import load_schedule, run_trace, write_trace_csv
from taskmix.envs.tasks import TaskSpec


def _config_from_meta(meta: dict) -> RunConfig:
    flat = dict(meta["config"])
    flat["bases"] = tuple(flat["bases"])
    flat["sac_hidden"] = tuple(flat["sac_hidden"])
    return validate_config(RunConfig(**flat))


def _load_agent(checkpoint_path):
    params, meta = load_checkpoint(checkpoint_path)
    cfg = _config_from_meta(meta)
    encoder, decoders, agent = build_networks(cfg)
    return cfg, params, encoder, decoders, agent, meta


def _parse_task_arg(spec: str | None, cfg: RunConfig):
    """Task list from a YAML file, 'random:N', or the run's own test set."""
    if spec is None:
        rngs = make_rngs(cfg.seed)
        sample_task_set(cfg, cfg.train_tasks, rngs["tasks"])  # skip train draws
        return sample_task_set(cfg, cfg.test_tasks, rngs["tasks"])
    if spec.startswith("random:"):
        count = int(spec.split(":", 1)[1])
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(9)[-1])
        return sample_task_set(cfg, count, rng)
    path = Path(spec)
    if not path.exists():
        raise ConfigurationError(
            f"--tasks must be a YAML file, 'random:N', or omitted; "
            f"no file at '{spec}'")
    with open(path) as f:
        doc = yaml.safe_load(f)
    if not isinstance(doc, list) or not doc:
        raise ConfigurationError(f"task file must be a nonempty YAML list: {spec}")
    tasks = []
    for i, entry in enumerate(doc):
        if not isinstance(entry, dict) or "base" not in entry or "target" not in entry:
            raise ConfigurationError(
                f"task entry {i} needs 'base' and 'target' keys")
        tasks.append(TaskSpec(str(entry["base"]), float(entry["target"]),
                              int(entry.get("axis", 0))))
    return tasks


def cmd_train(args) -> int:
    cfg = load_config(args.config, seed=args.seed)
    trainer = Trainer(cfg, args.out)
    last = trainer.run()
    print(f"done: {args.out}/metrics.csv, {args.out}/checkpoint.tmx "
          f"(epoch {last.get('epoch', 0)})")
    return 0


def cmd_eval(args) -> int:
    cfg, params, encoder, _, agent, meta = _load_agent(args.checkpoint)
    tasks = _parse_task_arg(args.tasks, cfg)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(10)[-1])
    result = meta_test_rollout(cfg, params, encoder, agent, tasks, rng)
    print(f"checkpoint epoch {meta.get('epoch', '?')}, "
          f"{len(tasks)} tasks, mean return {result['mean_return']:.4f}")
    for spec, ret in zip(tasks, result["per_task"]):
        print(f"  {spec.base:<12} target {spec.target:+8.3f} return {ret:9.3f}")
    return 0


def cmd_trace(args) -> int:
    cfg, params, encoder, _, agent, _ = _load_agent(args.checkpoint)
    schedule = load_schedule(args.schedule)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(11)[-1])
    rows = run_trace(cfg, params, encoder, agent, schedule, rng)
    write_trace_csv(rows, args.out)
    print(f"wrote {len(rows)} trace rows to {args.out}")
    return 0


def cmd_latent(args) -> int:
    cfg, params, encoder, _, agent, _ = _load_agent(args.checkpoint)
    rngs = make_rngs(cfg.seed)
    sample_task_set(cfg, cfg.train_tasks, rngs["tasks"])  # skip train draws
    tasks = sample_task_set(cfg, cfg.test_tasks, rngs["tasks"])
    env = make_env(cfg)
    # fresh all-validation buffer built from held-out-task roll-outs
    buffer = ReplayBuffer(env.obs_dim, env.action_dim, cfg.episode_cap,
                          rngs["buffer"], train_fraction=0.0)
    needed = -(-max(args.n, 1) // (len(tasks) * cfg.episode_cap))
    for _ in range(needed):
        out = lockstep_rollout(cfg, params, encoder, agent, tasks,
                               rngs["env"], action_mode="mean", z_mode="mean")
        for row, spec in enumerate(tasks):
            label = cfg.bases.index(spec.base)
            L = cfg.episode_cap
            buffer.append(EpisodeRecord(
                s=out["s"][row], a=out["a"][row], r=out["r"][row],
                s_next=out["s_next"][row],
                base_label=np.full(L, label, dtype=np.int64),
                target=np.full(L, spec.target), task_id=row))
    meta = export_latent(buffer, encoder, params, args.n, cfg.context_length,
                         cfg.bases, rngs["eval"], args.out)
    print(f"wrote {meta['count']} embeddings to {args.out} "
          f"(pca explained {meta['pca_explained']})")
    return 0


def cmd_plot(args) -> int:
    plot_file(args.in_path, args.out)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="taskmix",
        description="Task-inference meta-RL on analytic benchmarks")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the training loop")
    p.add_argument("--config", required=True, help="YAML run configuration")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="zero-shot evaluation of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tasks", default=None,
                   help="YAML task file or 'random:N' (default: the run's "
                        "held-out test set)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("trace", help="tracked-value trace through a schedule")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--schedule", required=True,
                   help="YAML list of {base, target, steps}")
    p.add_argument("--out", default="trace.csv")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("latent", help="dump context embeddings with PCA")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, default=512,
                   help="number of contexts to embed")
    p.add_argument("--out", default="latent.jsonl")
    p.set_defaults(func=cmd_latent)

    p = sub.add_parser("plot", help="render a metrics or trace CSV as SVG")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
