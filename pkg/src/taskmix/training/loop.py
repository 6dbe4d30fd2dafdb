"""Epoch loop: collect roll-outs, fit the encoder, fit the policy, evaluate.

Each epoch runs three strictly ordered phases. Collection steps all
accessible training tasks in lockstep with per-timestep task inference
(incremental GRU state, one embedding refresh per step). The inference
phase optimizes encoder and decoders on train-stratum context batches;
the policy phase optimizes the actor-critic on buffer batches whose
embeddings are computed fresh from the current encoder but never
differentiated. Evaluation epochs append one metrics row, refresh the
rolling checkpoint, and log wall-clock time to a separate file so
metrics stay byte-reproducible.
"""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np

from taskmix.envs.planar import PlanarEnv
from taskmix.envs.point import PointEnv
from taskmix.envs.tasks import TaskSpec, sample_task
from taskmix.envs.wrappers import continual_access
from taskmix.errors import ConfigurationError
from taskmix.inference import (Decoders, LossWeights, TaskEncoder,
                               classification_accuracy, total_inference_loss)
from taskmix.nn import autodiff as ad
from taskmix.nn.optim import adam_init, adam_step
from taskmix.nn.params import ParameterSet, save_checkpoint
from taskmix.replay import EpisodeRecord, ReplayBuffer
from taskmix.sac import SACAgent
from taskmix.training.config import RunConfig, config_hash, config_to_dict

RNG_STREAMS = ("tasks", "env", "encoder", "policy", "buffer", "init",
               "metatest", "eval")

EMBED_CHUNK = 2048


def make_rngs(seed: int) -> dict[str, np.random.Generator]:
    """Independent named streams spawned from one root seed."""
    root = np.random.SeedSequence(seed)
    children = root.spawn(len(RNG_STREAMS))
    return {name: np.random.default_rng(ss)
            for name, ss in zip(RNG_STREAMS, children)}


def make_env(cfg: RunConfig):
    if cfg.benchmark == "planar":
        return PlanarEnv(episode_cap=cfg.episode_cap)
    if cfg.benchmark == "point":
        return PointEnv(episode_cap=cfg.episode_cap)
    raise ConfigurationError(f"unknown benchmark '{cfg.benchmark}'")


def build_networks(cfg: RunConfig):
    probe = make_env(cfg)
    context_dim = 2 * probe.obs_dim + probe.action_dim + 1
    encoder = TaskEncoder(context_dim, cfg.dim_z, cfg.components, cfg.c_n,
                          extractor=cfg.extractor)
    decoders = Decoders(probe.obs_dim, probe.action_dim, cfg.dim_z, cfg.c_n)
    agent = SACAgent(probe.obs_dim, probe.action_dim, cfg.dim_z,
                     hidden=cfg.sac_hidden, gamma=cfg.gamma, tau=cfg.tau,
                     init_alpha=cfg.init_alpha)
    return encoder, decoders, agent


def register_networks(encoder, decoders, agent, rng) -> ParameterSet:
    params = ParameterSet()
    encoder.register(params, rng)
    decoders.register(params, rng)
    agent.register(params, rng)
    return params


def sample_task_set(cfg: RunConfig, count: int, rng) -> list[TaskSpec]:
    """`count` tasks cycling through the base families in config order."""
    return [sample_task(cfg.bases[i % len(cfg.bases)], rng) for i in range(count)]


def lockstep_rollout(cfg: RunConfig, params, encoder, agent,
                     tasks: list[TaskSpec], env_rng, *, action_mode: str = "mean",
                     policy_rng=None, z_mode: str = "mean", z_rng=None) -> dict:
    """One episode per task, all tasks stepped together.

    The context of each task's own transitions is folded into the
    encoder's recurrent state one step at a time, so every action sees
    an embedding of exactly the history so far (empty at step 0).
    """
    n = len(tasks)
    envs = [make_env(cfg) for _ in range(n)]
    obs = np.zeros((n, envs[0].obs_dim))
    for row, spec in enumerate(tasks):
        obs[row] = envs[row].reset(spec, env_rng)
    h = encoder.init_hidden(n)
    z = encoder.embed_hidden(params, h, mode=z_mode, rng=z_rng)
    L = cfg.episode_cap
    s_log = np.zeros((n, L, envs[0].obs_dim))
    a_log = np.zeros((n, L, envs[0].action_dim))
    r_log = np.zeros((n, L))
    s2_log = np.zeros((n, L, envs[0].obs_dim))
    for t in range(L):
        actions = agent.act(params, obs, z, rng=policy_rng, mode=action_mode)
        nxt = np.zeros_like(obs)
        for row in range(n):
            nxt[row], r_log[row, t], _ = envs[row].step(actions[row])
        s_log[:, t] = obs
        a_log[:, t] = actions
        s2_log[:, t] = nxt
        ctx_rows = np.concatenate([obs, actions, r_log[:, t:t + 1], nxt], axis=1)
        h = encoder.step_hidden(params, ctx_rows, h)
        z = encoder.embed_hidden(params, h, mode=z_mode, rng=z_rng)
        obs = nxt
    return {"s": s_log, "a": a_log, "r": r_log, "s_next": s2_log,
            "returns": r_log.sum(axis=1)}


def meta_test_rollout(cfg: RunConfig, params, encoder, agent,
                      tasks: list[TaskSpec], env_rng) -> dict:
    """Zero-shot returns: one deterministic episode per task, no updates."""
    if not tasks:
        raise ConfigurationError("meta-test needs at least one task")
    out = lockstep_rollout(cfg, params, encoder, agent, tasks, env_rng,
                           action_mode="mean", z_mode="mean")
    returns = out["returns"]
    per_base = {}
    for base in cfg.bases:
        rows = [i for i, t in enumerate(tasks) if t.base == base]
        per_base[base] = float(np.mean(returns[rows])) if rows else float("nan")
    return {"mean_return": float(returns.mean()),
            "per_task": returns.tolist(), "per_base": per_base}


class Trainer:
    def __init__(self, cfg: RunConfig, out_dir):
        self.cfg = cfg
        self.out_dir = Path(out_dir)
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            probe = self.out_dir / ".write_probe"
            probe.write_text("")
            probe.unlink()
        except OSError as e:
            raise ConfigurationError(
                f"output directory '{out_dir}' is not writable: {e}") from e

        self.rngs = make_rngs(cfg.seed)
        self.encoder, self.decoders, self.agent = build_networks(cfg)
        self.params = register_networks(self.encoder, self.decoders, self.agent,
                                        self.rngs["init"])
        self.train_tasks = sample_task_set(cfg, cfg.train_tasks, self.rngs["tasks"])
        self.test_tasks = sample_task_set(cfg, cfg.test_tasks, self.rngs["tasks"])

        probe_env = make_env(cfg)
        self.buffer = ReplayBuffer(
            probe_env.obs_dim, probe_env.action_dim, cfg.episode_cap,
            self.rngs["buffer"], train_fraction=cfg.train_fraction,
            max_episodes=cfg.max_buffer_episodes or None)

        self.inference_names = self.params.names_for("encoder", "decoder")
        self.opt_inference = adam_init(self.params, self.inference_names,
                                       cfg.encoder_lr)
        self.opt_sac = self.agent.make_optimizers(self.params, cfg.sac_lr)
        self.weights = LossWeights(kl=cfg.kl_weight, euclid=cfg.euclid_weight,
                                   classification=cfg.classification_weight)

    # --------------------------------------------------------- collection

    def _accessible_indices(self, epoch: int) -> list[int]:
        if self.cfg.continual == "none":
            return list(range(len(self.train_tasks)))
        progress = epoch / self.cfg.epochs
        allowed = continual_access(self.cfg.continual, progress,
                                   len(self.cfg.bases))
        allowed_bases = {self.cfg.bases[i - 1] for i in allowed}
        return [i for i, t in enumerate(self.train_tasks)
                if t.base in allowed_bases]

    def collect(self, task_indices: list[int], steps_per_task: int) -> int:
        """Roll out every listed task in lockstep; returns steps stored."""
        if not task_indices:
            return 0
        cfg = self.cfg
        rounds = -(-steps_per_task // cfg.episode_cap)
        total = 0
        for _ in range(rounds):
            total += self._collect_round(task_indices)
        return total

    def _collect_round(self, task_indices: list[int]) -> int:
        cfg = self.cfg
        tasks = [self.train_tasks[idx] for idx in task_indices]
        out = lockstep_rollout(cfg, self.params, self.encoder, self.agent,
                               tasks, self.rngs["env"], action_mode="sample",
                               policy_rng=self.rngs["policy"],
                               z_mode=cfg.z_mode, z_rng=self.rngs["encoder"])
        L = cfg.episode_cap
        for row, idx in enumerate(task_indices):
            spec = self.train_tasks[idx]
            label = self.cfg.bases.index(spec.base)
            self.buffer.append(EpisodeRecord(
                s=out["s"][row], a=out["a"][row], r=out["r"][row],
                s_next=out["s_next"][row],
                base_label=np.full(L, label, dtype=np.int64),
                target=np.full(L, spec.target), task_id=idx))
        return len(task_indices) * L

    # ----------------------------------------------------- inference phase

    def inference_phase(self) -> dict:
        cfg = self.cfg
        parts = {}
        for _ in range(cfg.inference_steps):
            batch = self.buffer.sample_context_batch(
                cfg.inference_batch, cfg.context_length, "train",
                self.rngs["buffer"])

            def comp(p):
                total, terms = total_inference_loss(
                    p, self.encoder, self.decoders, batch, self.weights,
                    rng=self.rngs["encoder"], mode="sample",
                    literal_rho_softmax=cfg.literal_rho_softmax)
                parts.clear()
                parts.update(terms)
                return total

            _, grads = ad.evaluate_with_gradients(comp, self.params,
                                                  wrt=self.inference_names)
            adam_step(self.params, grads, self.opt_inference)
        return parts

    # -------------------------------------------------------- policy phase

    def policy_phase(self) -> dict:
        cfg = self.cfg
        diag = {}
        remaining = cfg.policy_steps
        per_chunk = max(1, EMBED_CHUNK // cfg.policy_batch)
        while remaining > 0:
            k = min(per_chunk, remaining)
            batches = [self.buffer.sample_rl_batch(cfg.policy_batch,
                                                   cfg.context_length,
                                                   self.rngs["buffer"])
                       for _ in range(k)]
            windows = np.concatenate([b["windows"] for b in batches])
            mask = np.concatenate([b["mask"] for b in batches])
            z_all = self.encoder.embed_arrays(
                self.params, windows, mask, mode=cfg.z_mode,
                rng=self.rngs["policy"])
            for j, batch in enumerate(batches):
                z = z_all[j * cfg.policy_batch:(j + 1) * cfg.policy_batch]
                diag = self.agent.update(self.params, self.opt_sac, batch, z,
                                         self.rngs["policy"])
            remaining -= k
        return diag

    # --------------------------------------------------------- evaluation

    def meta_test(self, tasks: list[TaskSpec] | None = None) -> dict:
        """Zero-shot returns: one deterministic episode per held-out task."""
        tasks = self.test_tasks if tasks is None else tasks
        return meta_test_rollout(self.cfg, self.params, self.encoder,
                                 self.agent, tasks, self.rngs["metatest"])

    def validation_eval(self) -> dict:
        cfg = self.cfg
        n = min(cfg.inference_batch, self.buffer.stratum_size("val"))
        if n == 0:
            nan = float("nan")
            return {"prediction": nan, "kl": nan, "euclid": nan,
                    "classification": nan, "total": nan, "accuracy": nan}
        batch = self.buffer.sample_context_batch(n, cfg.context_length, "val",
                                                 self.rngs["eval"])

        def comp(p):
            total, terms = total_inference_loss(
                p, self.encoder, self.decoders, batch, self.weights,
                mode="mean", literal_rho_softmax=cfg.literal_rho_softmax)
            self._val_terms = terms
            return total
        ad.evaluate(comp, self.params)
        _, _, rho, _ = self.encoder.stats_arrays(self.params, batch.windows,
                                                 batch.mask)
        out = dict(self._val_terms)
        out["accuracy"] = classification_accuracy(rho, batch.labels)
        return out

    # ----------------------------------------------------------- full run

    def metrics_header(self) -> list[str]:
        return (["epoch", "meta_test_return"]
                + [f"return_{b}" for b in self.cfg.bases]
                + ["prediction_loss", "kl_loss", "euclid_loss",
                   "classification_loss", "accuracy"])

    def _metrics_row(self, epoch: int, meta: dict, val: dict) -> list:
        return ([epoch, meta["mean_return"]]
                + [meta["per_base"][b] for b in self.cfg.bases]
                + [val["prediction"], val["kl"], val["euclid"],
                   val["classification"], val["accuracy"]])

    def checkpoint_meta(self, epoch: int) -> dict:
        return {"config": config_to_dict(self.cfg),
                "config_hash": config_hash(self.cfg), "epoch": epoch}

    def run(self, log=print) -> dict:
        cfg = self.cfg
        interval = cfg.evaluation_interval
        metrics_path = self.out_dir / "metrics.csv"
        timing_path = self.out_dir / "timing.csv"
        ckpt_path = self.out_dir / "checkpoint.tmx"
        last = {}
        with open(metrics_path, "w") as mf, open(timing_path, "w") as tf:
            mf.write(",".join(self.metrics_header()) + "\n")
            tf.write("epoch,seconds\n")
            self.collect(self._accessible_indices(0), cfg.initial_samples)
            for epoch in range(1, cfg.epochs + 1):
                t0 = time.perf_counter()
                self.collect(self._accessible_indices(epoch - 1),
                             cfg.samples_per_task)
                self.inference_phase()
                self.policy_phase()
                if epoch % interval == 0 or epoch == cfg.epochs:
                    meta = self.meta_test()
                    val = self.validation_eval()
                    row = self._metrics_row(epoch, meta, val)
                    mf.write(",".join(_fmt(v) for v in row) + "\n")
                    mf.flush()
                    save_checkpoint(self.params, ckpt_path,
                                    meta=self.checkpoint_meta(epoch))
                    last = {"epoch": epoch, "meta": meta, "val": val}
                    if log is not None:
                        log(f"epoch {epoch}/{cfg.epochs} "
                            f"return={meta['mean_return']:.3f} "
                            f"pred={val['prediction']:.4f} "
                            f"acc={val['accuracy']:.3f}", flush=True)
                seconds = time.perf_counter() - t0
                tf.write(f"{epoch},{seconds:.6f}\n")
                tf.flush()
        return last


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))
