"""Soft actor-critic conditioned on a frozen task embedding.

The actor maps [s, z] to a tanh-squashed Gaussian over actions; twin
critics score [s, a, z]. The embedding z enters every network as plain
input data and is held constant through the Bellman target and both
update passes, so policy training never backpropagates into the
encoder. Temperature is learned in log space against a fixed entropy
target of -dim(A).
"""

from __future__ import annotations

import numpy as np

from taskmix.errors import ConfigurationError, NumericFaultError
from taskmix.nn import autodiff as ad
from taskmix.nn.layers import MLP
from taskmix.nn.optim import AdamState, adam_init, adam_step
from taskmix.nn.params import ParameterSet

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
SQUASH_EPS = 1e-6
_LOG_2PI = float(np.log(2.0 * np.pi))


def _mlp_names(net: MLP) -> list[str]:
    names = []
    for layer in net.layers:
        names.extend((layer.w_name, layer.b_name))
    return names


class SACAgent:
    def __init__(self, obs_dim: int, action_dim: int, dim_z: int,
                 hidden=(128, 128), gamma: float = 0.99, tau: float = 0.005,
                 target_entropy: float | None = None, init_alpha: float = 0.2):
        if not 0.0 < tau <= 1.0:
            raise ConfigurationError(f"tau must be in (0, 1], got {tau}")
        if init_alpha <= 0.0:
            raise ConfigurationError(f"init_alpha must be positive, got {init_alpha}")
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.dim_z = dim_z
        self.gamma = gamma
        self.tau = tau
        self.init_alpha = float(init_alpha)
        self.target_entropy = (-float(action_dim) if target_entropy is None
                               else float(target_entropy))
        in_pi = obs_dim + dim_z
        in_q = obs_dim + action_dim + dim_z
        hidden = list(hidden)
        self.actor = MLP("sac.actor", in_pi, hidden, 2 * action_dim)
        self.q1 = MLP("sac.q1", in_q, hidden, 1)
        self.q2 = MLP("sac.q2", in_q, hidden, 1)
        self.q1_target = MLP("sac.q1_target", in_q, hidden, 1)
        self.q2_target = MLP("sac.q2_target", in_q, hidden, 1)
        self.alpha_name = "sac.log_alpha"
        self._critic_names = _mlp_names(self.q1) + _mlp_names(self.q2)
        self._actor_names = _mlp_names(self.actor)

    # ------------------------------------------------------------- set-up

    def register(self, params: ParameterSet, rng: np.random.Generator) -> None:
        self.actor.register(params, "policy", rng)
        self.q1.register(params, "policy", rng)
        self.q2.register(params, "policy", rng)
        self.q1_target.register(params, "target", rng)
        self.q2_target.register(params, "target", rng)
        params.add(self.alpha_name, np.full(1, np.log(self.init_alpha)), "temperature")
        self.sync_targets(params, tau=1.0)

    def make_optimizers(self, params: ParameterSet, lr: float) -> dict[str, AdamState]:
        return {
            "critic": adam_init(params, self._critic_names, lr),
            "actor": adam_init(params, self._actor_names, lr),
            "alpha": adam_init(params, [self.alpha_name], lr),
        }

    def sync_targets(self, params: ParameterSet, tau: float | None = None) -> None:
        """Soft-update target critics toward the online critics."""
        t = self.tau if tau is None else tau
        for online, target in ((self.q1, self.q1_target), (self.q2, self.q2_target)):
            for src, dst in zip(_mlp_names(online), _mlp_names(target)):
                arr = params[dst]
                arr *= 1.0 - t
                arr += t * params[src]

    # ----------------------------------------------------------- tape bits

    def _policy_head(self, p, s, z):
        out = self.actor(p, ad.concat([ad.as_node(s), ad.as_node(z)], axis=1))
        mu = out[:, :self.action_dim]
        log_std = ad.clip(out[:, self.action_dim:], LOG_STD_MIN, LOG_STD_MAX,
                          name="sac.actor.log_std")
        return mu, log_std

    def _pi(self, p, s, z, eps: np.ndarray):
        """Squashed action and its log-density via reparameterized noise."""
        mu, log_std = self._policy_head(p, s, z)
        std = ad.exp(log_std, name="sac.actor.std")
        pre = ad.add(mu, ad.mul(std, eps))
        a = ad.tanh(pre, name="sac.actor.squash")
        gauss = ad.add(ad.mul(0.5, ad.square(ad.as_node(eps))),
                       ad.add(log_std, 0.5 * _LOG_2PI))
        correction = ad.log(ad.add(ad.sub(1.0, ad.square(a)), SQUASH_EPS),
                            name="sac.actor.squash_correction")
        logp = ad.sum_(ad.sub(ad.neg(gauss), correction), axis=1,
                       name="sac.actor.logp")
        return a, logp

    def _q(self, p, net: MLP, s, a, z) -> ad.Node:
        out = net(p, ad.concat([ad.as_node(s), ad.as_node(a), ad.as_node(z)], axis=1))
        return ad.reshape(out, (out.value.shape[0],), name=f"{net.name}.flat")

    # ------------------------------------------------------------- acting

    def act(self, params, s: np.ndarray, z: np.ndarray,
            rng: np.random.Generator | None = None,
            mode: str = "sample") -> np.ndarray:
        s = np.atleast_2d(np.asarray(s, dtype=np.float64))
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        if not np.all(np.isfinite(z)):
            raise NumericFaultError("task embedding fed to the actor is not finite")
        if mode == "sample":
            if rng is None:
                raise ConfigurationError("sample mode requires an rng")
            eps = rng.standard_normal((s.shape[0], self.action_dim))
        elif mode == "mean":
            eps = np.zeros((s.shape[0], self.action_dim))
        else:
            raise ConfigurationError(f"unknown action mode '{mode}'")

        def comp(p):
            a, _ = self._pi(p, s, z, eps)
            return a
        return ad.evaluate(comp, params)

    # ------------------------------------------------------------- update

    def update(self, params: ParameterSet, optims: dict[str, AdamState],
               batch: dict, z: np.ndarray, rng: np.random.Generator) -> dict:
        """One gradient step on critics, actor, and temperature.

        `z` is one embedding row per transition, used verbatim on both
        sides of the Bellman backup and never differentiated.
        """
        s, a, r, s_next = batch["s"], batch["a"], batch["r"], batch["s_next"]
        n = s.shape[0]
        if z.shape != (n, self.dim_z):
            raise ConfigurationError(
                f"embedding batch shape {z.shape} does not match ({n}, {self.dim_z})")
        alpha = float(np.exp(params[self.alpha_name][0]))

        eps_next = rng.standard_normal((n, self.action_dim))
        eps_cur = rng.standard_normal((n, self.action_dim))

        def target_comp(p):
            a2, logp2 = self._pi(p, s_next, z, eps_next)
            q1t = self._q(p, self.q1_target, s_next, a2, z)
            q2t = self._q(p, self.q2_target, s_next, a2, z)
            soft = ad.sub(ad.minimum(q1t, q2t), ad.mul(alpha, logp2))
            return ad.add(r, ad.mul(self.gamma, soft), name="sac.bellman_target")
        y = ad.evaluate(target_comp, params)

        def critic_comp(p):
            q1 = self._q(p, self.q1, s, a, z)
            q2 = self._q(p, self.q2, s, a, z)
            loss = ad.add(ad.mean(ad.square(ad.sub(q1, y))),
                          ad.mean(ad.square(ad.sub(q2, y))), name="sac.critic_loss")
            return loss, ad.mean(q1)
        (critic_loss, q1_mean), cgrads = ad.evaluate_with_gradients(
            critic_comp, params, wrt=self._critic_names)
        adam_step(params, cgrads, optims["critic"])

        def actor_comp(p):
            a_new, logp = self._pi(p, s, z, eps_cur)
            q1 = self._q(p, self.q1, s, a_new, z)
            q2 = self._q(p, self.q2, s, a_new, z)
            loss = ad.mean(ad.sub(ad.mul(alpha, logp), ad.minimum(q1, q2)),
                           name="sac.actor_loss")
            return loss, logp
        (actor_loss, logp_vals), agrads = ad.evaluate_with_gradients(
            actor_comp, params, wrt=self._actor_names)
        adam_step(params, agrads, optims["actor"])

        # d/d(log_alpha) of mean(-exp(log_alpha) * (logp + target_entropy))
        alpha_grad = -alpha * float(np.mean(logp_vals + self.target_entropy))
        adam_step(params, {self.alpha_name: np.array([alpha_grad])}, optims["alpha"])

        self.sync_targets(params)
        return {
            "critic_loss": float(critic_loss),
            "actor_loss": float(actor_loss),
            "alpha": alpha,
            "entropy": float(-np.mean(logp_vals)),
            "q1_mean": float(q1_mean),
        }
