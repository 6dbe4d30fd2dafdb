"""End-to-end acceptance checks for the whole package.

The desk-profile checks (clustering quality, schedule tracking, and
byte-level determinism) consume run artifacts cached under `.cache/`.
Missing or stale artifacts are regenerated in-process by training the
shipped desk configuration, which takes a few hours per run; `make
desk-runs` (or the command in the README) produces them ahead of time.
"""

import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from taskmix.envs.planar import D0_FLOOR, PlanarEnv
from taskmix.envs.point import PointEnv
from taskmix.envs.tasks import (ALL_RANGES, PLANAR_RANGES, POINT_RANGES,
                                TaskSpec, deviation, sample_task)
from taskmix.envs.wrappers import NonStationaryEnv
from taskmix.inference.gaussians import gaussian_product, sample_z
from taskmix.inference.losses import (LossWeights, classification_loss,
                                      euclid_loss, kl_loss,
                                      total_inference_loss)
from taskmix.inference.networks import Decoders, TaskEncoder
from taskmix.nn import autodiff as ad
from taskmix.nn.layers import GRU
from taskmix.nn.params import ParameterSet, load_checkpoint
from taskmix.replay import ContextBatch
from taskmix.sac import SACAgent
from taskmix.training.config import RunConfig, config_hash, load_config
from taskmix.training.loop import Trainer, build_networks
from taskmix.training.plotting import parse_csv
from taskmix.training.trace import run_trace

RNG = np.random.default_rng

ROOT = Path(__file__).resolve().parents[1]
DESK_CONFIG = ROOT / "configs" / "desk.yaml"
CACHE = ROOT / ".cache"

SMALL = RunConfig(
    epochs=2, train_tasks=4, test_tasks=2, samples_per_task=16,
    initial_samples=16, inference_steps=1, inference_batch=16,
    policy_steps=1, policy_batch=8, context_length=8, seed=0,
    eval_every=1, episode_cap=16, dim_z=3, components=4, c_n=1,
    sac_hidden=(16, 16))

_desk_cache: dict[str, Path] = {}


def desk_run(tag: str, seed: int) -> Path:
    """Artifact directory of a finished desk-profile run for `seed`.

    A cached directory is reused only if its checkpoint metadata matches
    the shipped config at that seed and training reached the final
    epoch; anything else triggers a full in-process training run.
    """
    if tag in _desk_cache:
        return _desk_cache[tag]
    out = CACHE / f"desk-{tag}"
    cfg = load_config(DESK_CONFIG, seed=seed)
    metrics = out / "metrics.csv"
    ckpt = out / "checkpoint.tmx"
    fresh = False
    if metrics.exists() and ckpt.exists():
        try:
            _, meta = load_checkpoint(ckpt)
            _, cols = parse_csv(metrics)
            fresh = (meta.get("config_hash") == config_hash(cfg)
                     and meta.get("epoch") == cfg.epochs
                     and bool(cols["epoch"])
                     and int(cols["epoch"][-1]) == cfg.epochs)
        except Exception:
            fresh = False
    if not fresh:
        Trainer(cfg, out).run(log=None)
    _desk_cache[tag] = out
    return out


# ---------------------------------------------------------------------------
# 1. gradient integrity across every network and the combined objective
# ---------------------------------------------------------------------------

def test_criterion_1_gradient_integrity_under_two_minutes():
    t0 = time.perf_counter()
    rng = RNG(0)
    ctx, obs, act, dz, K = 11, 4, 2, 3, 4
    windows = rng.standard_normal((4, 5, ctx))
    mask = np.ones((4, 5), dtype=bool)
    mask[0, :3] = False

    params = ParameterSet()
    encoder = TaskEncoder(ctx, dz, K, 2)
    decoders = Decoders(obs, act, dz, 2)
    agent = SACAgent(obs, act, dz, hidden=(12, 12))
    encoder.register(params, rng)
    decoders.register(params, rng)
    agent.register(params, rng)

    s = rng.standard_normal((6, obs))
    a = rng.standard_normal((6, act))
    z = rng.standard_normal((6, dz))
    feats = rng.standard_normal((6, encoder.gru.hidden_dim))
    eps = rng.standard_normal((6, act))

    def gru_comp(p):
        return ad.sum_(encoder.gru(p, windows, mask))

    def head_comp(p):
        mu, var, rho, _ = encoder.head_stats(p, ad.as_node(feats))
        return ad.add(ad.sum_(mu), ad.add(ad.sum_(var), ad.sum_(ad.log(rho))))

    def dynamics_comp(p):
        return ad.mean(ad.square(decoders.predict_dynamics(p, s, a, z)))

    def reward_comp(p):
        return ad.mean(ad.square(decoders.predict_reward(p, s, a, z)))

    def policy_comp(p):
        actions, logp = agent._pi(p, s, z, eps)
        return ad.add(ad.sum_(actions), ad.mean(logp))

    def critic_comp(p):
        return ad.add(ad.sum_(agent._q(p, agent.q1, s, a, z)),
                      ad.sum_(agent._q(p, agent.q2, s, a, z)))

    data = RNG(1)
    batch = ContextBatch(
        windows=windows, mask=mask,
        labels=data.integers(0, K, size=4),
        targets=data.uniform(1.0, 4.0, size=4),
        anchors=np.arange(4),
        states=data.standard_normal((4, obs)),
        actions=data.standard_normal((4, act)),
        rewards=data.standard_normal(4),
        next_states=data.standard_normal((4, obs)))

    def total_comp(p):
        total, _ = total_inference_loss(p, encoder, decoders, batch,
                                        LossWeights(), mode="mean")
        return total

    names = params.names()
    cases = {
        "gru": (gru_comp, [n for n in names if n.startswith("encoder.gru")]),
        "vae_head": (head_comp,
                     [n for n in names if n.startswith("encoder.head")]),
        "dynamics": (dynamics_comp,
                     [n for n in names if n.startswith("decoder.dynamics")]),
        "reward": (reward_comp,
                   [n for n in names if n.startswith("decoder.reward")]),
        "policy": (policy_comp, list(agent._actor_names)),
        "critics": (critic_comp, list(agent._critic_names)),
        "total_inference_loss": (total_comp,
                                 params.names_for("encoder", "decoder")),
    }
    errors = {}
    for label, (comp, wrt) in cases.items():
        assert wrt, label
        errors[label] = ad.gradient_check(comp, params, step=1e-5,
                                          n_coords=20, rng=RNG(2), wrt=wrt)
    elapsed = time.perf_counter() - t0
    bad = {k: v for k, v in errors.items() if not v < 1e-3}
    assert not bad, f"finite-difference mismatch: {bad}"
    assert elapsed < 120.0, f"gradient integrity took {elapsed:.1f}s"


# ---------------------------------------------------------------------------
# 2. closed-form loss values and Gaussian product identities
# ---------------------------------------------------------------------------

def test_criterion_2_closed_form_oracles():
    kl = ad.evaluate(lambda p: kl_loss(np.array([[1.0]]), np.array([[1.0]]),
                                       np.array([1.0])), ParameterSet())
    assert abs(float(kl) - 0.5) < 1e-9

    euclid = ad.evaluate(lambda p: euclid_loss(np.array([[0.0], [2.0]]),
                                               np.array([[1.0], [1.0]])),
                         ParameterSet())
    assert abs(float(euclid) - 0.5) < 1e-9

    cls = ad.evaluate(lambda p: classification_loss(np.zeros((3, 8)),
                                                    np.array([0, 3, 7])),
                      ParameterSet())
    assert abs(float(cls) - np.log(8.0)) < 1e-9

    mu, var = gaussian_product(0.0, 1.0, 0.0, 1.0)
    assert abs(mu) < 1e-12 and abs(var - 0.5) < 1e-12
    mu, var = gaussian_product(0.0, 2.0, 2.0, 2.0)
    assert abs(mu - 1.0) < 1e-12 and abs(var - 1.0) < 1e-12
    mu, var = gaussian_product(7.0, 1e12, 1.5, 2.5)
    assert abs(mu - 1.5) < 1e-9 and abs(var - 2.5) < 1e-9


# ---------------------------------------------------------------------------
# 3. mixture sampling statistics over 1e5 draws
# ---------------------------------------------------------------------------

def test_criterion_3_sampling_statistics_under_one_minute():
    t0 = time.perf_counter()
    rng = RNG(3)
    K, dz, n = 4, 3, 100_000
    mu = rng.standard_normal((K, dz))
    var = np.abs(rng.standard_normal((K, dz))) + 0.2
    rho = rng.dirichlet(np.ones(K))

    draws = sample_z(np.broadcast_to(mu, (n, K, dz)),
                     np.broadcast_to(var, (n, K, dz)),
                     np.broadcast_to(rho, (n, K)), rng=RNG(4), mode="sample")
    want_mean = (rho[:, None] * mu).sum(axis=0)
    want_var = ((rho ** 2)[:, None] * var).sum(axis=0)
    se = np.sqrt(want_var / n)
    assert np.all(np.abs(draws.mean(axis=0) - want_mean) < 4.0 * se)
    assert np.all(np.abs(draws.var(axis=0) / want_var - 1.0) < 0.05)
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0, f"sampling statistics took {elapsed:.1f}s"


# ---------------------------------------------------------------------------
# 4. decoupled optimization: each phase leaves the other side bit-identical
# ---------------------------------------------------------------------------

def test_criterion_4_decoupling_is_bit_exact(tmp_path):
    trainer = Trainer(SMALL, tmp_path / "inf")
    trainer.collect(list(range(SMALL.train_tasks)), SMALL.initial_samples)
    control = {n: trainer.params[n].copy()
               for n in trainer.params.names_for("policy", "target",
                                                 "temperature")}
    before_inf = {n: trainer.params[n].copy()
                  for n in trainer.inference_names}
    trainer.inference_phase()
    for name, arr in control.items():
        assert np.array_equal(trainer.params[name], arr), name
    assert any(not np.array_equal(trainer.params[n], before_inf[n])
               for n in before_inf)

    trainer = Trainer(SMALL, tmp_path / "pol")
    trainer.collect(list(range(SMALL.train_tasks)), SMALL.initial_samples)
    inference = {n: trainer.params[n].copy()
                 for n in trainer.inference_names}
    before_pol = {n: trainer.params[n].copy()
                  for n in trainer.params.names_for("policy", "temperature")}
    trainer.policy_phase()
    for name, arr in inference.items():
        assert np.array_equal(trainer.params[name], arr), name
    assert any(not np.array_equal(trainer.params[n], before_pol[n])
               for n in before_pol)


# ---------------------------------------------------------------------------
# 5. benchmark contracts: reward sign/normalization, ranges, continuity
# ---------------------------------------------------------------------------

def test_criterion_5_benchmark_contracts_under_one_minute():
    t0 = time.perf_counter()
    rng = RNG(5)

    # rewards never exceed 0 under random play, both benchmarks
    for base in PLANAR_RANGES:
        env = PlanarEnv(episode_cap=60)
        env.reset(sample_task(base, rng), rng)
        for _ in range(60):
            _, r, _ = env.step(rng.uniform(-1, 1, size=3))
            assert r <= 0.0, base
    for base in POINT_RANGES:
        env = PointEnv(episode_cap=60)
        env.reset(sample_task(base, rng), rng)
        for _ in range(60):
            _, r, _ = env.step(rng.uniform(-1, 1, size=3))
            assert r <= 0.0, base

    # pseudo-normalization: the reset-time state scores exactly -1
    # whenever the normalizer is not floored
    for spec in (TaskSpec("GoalFront", 20.0), TaskSpec("RunForward", 4.0),
                 TaskSpec("FrontFlip", 3.0 * np.pi), TaskSpec("Jump", 2.0)):
        env = PlanarEnv()
        env.reset(spec, rng)
        assert env.d0 > D0_FLOOR
        assert env.reward_for_state(env.state) == -1.0

    # published target ranges hold across 1e5 draws per family
    for base, (lo, hi) in ALL_RANGES.items():
        draws = np.array([sample_task(base, rng).target for _ in range(10 ** 5)])
        mags = np.abs(draws) if base in ("PointRun", "PointGoal") else draws
        assert np.all(mags >= lo), base
        assert np.all(mags <= hi), base

    # a task switch keeps the body state: the first post-switch step
    # advances the pre-switch velocity by exactly one Euler update
    schedule = [(TaskSpec("RunForward", 2.0), 5),
                (TaskSpec("RunBackward", -3.0), 5)]
    env = NonStationaryEnv(PlanarEnv(), schedule)
    env.reset(RNG(6))
    action = np.array([0.7, 0.0, 0.0])
    for _ in range(5):
        env.step(action)
    v_before = env.env.state.v_x
    d0_before = env.env.d0
    env.step(action)
    assert env.task.base == "RunBackward"
    assert env.env.state.v_x == v_before + 0.05 * 10.0 * 0.7
    assert env.env.d0 != d0_before  # renormalized for the new task

    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0, f"benchmark contracts took {elapsed:.1f}s"


# ---------------------------------------------------------------------------
# 6. desk-scale clustering quality after the full 300-epoch run
# ---------------------------------------------------------------------------

def test_criterion_6_desk_clustering_accuracy_and_prediction():
    out = desk_run("seed0", seed=0)
    _, cols = parse_csv(out / "metrics.csv")
    assert cols["accuracy"], "metrics file has no evaluation rows"
    final_acc = cols["accuracy"][-1]
    final_pred = cols["prediction_loss"][-1]
    assert final_acc >= 0.90, f"validation accuracy {final_acc:.3f} < 0.90"
    assert final_pred < 0.1, f"validation prediction loss {final_pred:.4f}"


# ---------------------------------------------------------------------------
# 7. zero-shot tracking through a mid-episode task schedule
# ---------------------------------------------------------------------------

def test_criterion_7_schedule_tracking_in_two_of_three_seeds():
    schedule = [(TaskSpec("RunForward", 2.0), 80),
                (TaskSpec("RunForward", 4.0), 80),
                (TaskSpec("RunBackward", -3.0), 80)]
    passes = 0
    details = []
    for seed in (0, 1, 2):
        out = desk_run(f"seed{seed}", seed=seed)
        params, meta = load_checkpoint(out / "checkpoint.tmx")
        cfg = load_config(DESK_CONFIG, seed=seed)
        assert meta["config_hash"] == config_hash(cfg)
        encoder, _, agent = build_networks(cfg)
        rng = np.random.default_rng(
            np.random.SeedSequence(cfg.seed).spawn(11)[-1])
        rows = run_trace(cfg, params, encoder, agent, schedule, rng)
        values = np.array([r[1] for r in rows])
        ok = True
        segs = []
        for i, (spec, steps) in enumerate(schedule):
            tail = values[i * 80 + 40:(i + 1) * 80]
            err = np.max(np.abs(tail - spec.target))
            segs.append(err / abs(spec.target))
            ok = ok and err < 0.25 * abs(spec.target)
        details.append((seed, ok, [round(s, 3) for s in segs]))
        passes += ok
    assert passes >= 2, f"tracking failed; per-seed tail errors: {details}"


# ---------------------------------------------------------------------------
# 8. actor-critic sanity on a one-step reward-matching task
# ---------------------------------------------------------------------------

def test_criterion_8_bandit_reaches_optimum_under_five_minutes():
    t0 = time.perf_counter()
    rng = RNG(0)
    agent = SACAgent(1, 1, 1, hidden=(64, 64), gamma=0.0)
    params = ParameterSet()
    agent.register(params, rng)
    optims = agent.make_optimizers(params, 3e-4)
    n = 64
    s = np.zeros((n, 1))
    z = np.zeros((n, 1))
    for _ in range(2000):
        a = agent.act(params, s, z, rng=rng)
        batch = {"s": s, "a": a, "r": -np.abs(a[:, 0] - 0.5), "s_next": s}
        agent.update(params, optims, batch, z, rng)
    final = agent.act(params, np.zeros((1, 1)), np.zeros((1, 1)),
                      mode="mean")[0, 0]
    elapsed = time.perf_counter() - t0
    assert abs(final - 0.5) < 0.1, f"deterministic action {final:.4f}"
    assert elapsed < 300.0, f"bandit oracle took {elapsed:.1f}s"


# ---------------------------------------------------------------------------
# 9. byte-level determinism of the desk profile
# ---------------------------------------------------------------------------

def test_criterion_9_same_seed_desk_runs_match_byte_for_byte():
    first = desk_run("seed0", seed=0)
    second = desk_run("seed0-repeat", seed=0)
    a = (first / "metrics.csv").read_bytes()
    b = (second / "metrics.csv").read_bytes()
    assert a == b


def test_small_profile_determinism_guards_the_desk_claim(tmp_path):
    blobs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        Trainer(replace(SMALL, seed=5), out).run(log=None)
        blobs.append((out / "metrics.csv").read_bytes())
    assert blobs[0] == blobs[1]
