"""Run configuration: YAML blocks mirrored into one flat dataclass."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, replace

import yaml

from taskmix.errors import ConfigurationError

CONTINUAL_SETTINGS = ("none", "linear", "cut")


@dataclass(frozen=True)
class RunConfig:
    # run block
    epochs: int = 300
    train_tasks: int = 16
    test_tasks: int = 8
    samples_per_task: int = 100
    initial_samples: int = 100
    inference_steps: int = 64
    inference_batch: int = 512
    policy_steps: int = 256
    policy_batch: int = 128
    context_length: int = 32
    seed: int = 0
    continual: str = "none"
    eval_every: int = 0          # 0 -> max(1, epochs // 50)
    max_buffer_episodes: int = 0  # 0 -> unbounded
    # benchmark block
    benchmark: str = "planar"
    bases: tuple[str, ...] = ("RunForward", "RunBackward", "GoalFront", "FrontStand")
    episode_cap: int = 100
    # encoder block
    dim_z: int = 8
    components: int = 4
    c_n: int = 2
    extractor: str = "gru"
    encoder_lr: float = 3e-4
    kl_weight: float = 1e-3
    euclid_weight: float = 5e-4
    classification_weight: float = 0.1
    literal_rho_softmax: bool = False
    z_mode: str = "mean"         # embeddings handed to the policy
    train_fraction: float = 0.8
    # sac block
    sac_hidden: tuple[int, ...] = (128, 128)
    sac_lr: float = 3e-4
    gamma: float = 0.99
    tau: float = 0.005
    init_alpha: float = 0.2

    @property
    def evaluation_interval(self) -> int:
        return self.eval_every if self.eval_every > 0 else max(1, self.epochs // 50)


_BLOCK_FIELDS = {
    "run": ("epochs", "train_tasks", "test_tasks", "samples_per_task",
            "initial_samples", "inference_steps", "inference_batch",
            "policy_steps", "policy_batch", "context_length", "seed",
            "continual", "eval_every", "max_buffer_episodes"),
    "benchmark": ("benchmark", "bases", "episode_cap"),
    "encoder": ("dim_z", "components", "c_n", "extractor", "encoder_lr",
                "kl_weight", "euclid_weight", "classification_weight",
                "literal_rho_softmax", "z_mode", "train_fraction"),
    "sac": ("sac_hidden", "sac_lr", "gamma", "tau", "init_alpha"),
}

# YAML keys spelled without their block prefix
_ALIASES = {
    ("benchmark", "name"): "benchmark",
    ("encoder", "lr"): "encoder_lr",
    ("sac", "hidden"): "sac_hidden",
    ("sac", "lr"): "sac_lr",
}


def validate_config(cfg: RunConfig) -> RunConfig:
    positive = ("epochs", "train_tasks", "test_tasks", "samples_per_task",
                "initial_samples", "inference_batch", "policy_batch",
                "context_length", "episode_cap", "dim_z", "components", "c_n")
    for name in positive:
        if getattr(cfg, name) < 1:
            raise ConfigurationError(f"config field '{name}' must be >= 1, "
                                     f"got {getattr(cfg, name)}")
    for name in ("inference_steps", "policy_steps", "eval_every",
                 "max_buffer_episodes"):
        if getattr(cfg, name) < 0:
            raise ConfigurationError(f"config field '{name}' must be >= 0")
    if cfg.continual not in CONTINUAL_SETTINGS:
        raise ConfigurationError(
            f"continual setting must be one of {CONTINUAL_SETTINGS}, "
            f"got '{cfg.continual}'")
    if not 0.0 <= cfg.train_fraction <= 1.0:
        raise ConfigurationError("train_fraction must lie in [0, 1]")
    if len(cfg.bases) > cfg.components:
        raise ConfigurationError(
            f"{len(cfg.bases)} base families need at least that many mixture "
            f"components, got {cfg.components}")
    if cfg.benchmark not in ("planar", "point"):
        raise ConfigurationError(f"unknown benchmark '{cfg.benchmark}'")
    return cfg


def config_from_dict(doc: dict) -> RunConfig:
    fields = {}
    known_blocks = set(_BLOCK_FIELDS)
    for block, entries in (doc or {}).items():
        if block not in known_blocks:
            raise ConfigurationError(f"unknown config block '{block}'")
        allowed = _BLOCK_FIELDS[block]
        for key, value in (entries or {}).items():
            field = _ALIASES.get((block, key), key)
            if field not in allowed:
                raise ConfigurationError(
                    f"unknown key '{key}' in config block '{block}'")
            if field in ("bases", "sac_hidden"):
                value = tuple(value)
            fields[field] = value
    return validate_config(RunConfig(**fields))


def load_config(path, seed: int | None = None) -> RunConfig:
    with open(path) as f:
        doc = yaml.safe_load(f)
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigurationError(f"config root must be a mapping: {path}")
    cfg = config_from_dict(doc)
    if seed is not None:
        cfg = validate_config(replace(cfg, seed=int(seed)))
    return cfg


def config_to_dict(cfg: RunConfig) -> dict:
    flat = asdict(cfg)
    flat["bases"] = list(flat["bases"])
    flat["sac_hidden"] = list(flat["sac_hidden"])
    return flat


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]
