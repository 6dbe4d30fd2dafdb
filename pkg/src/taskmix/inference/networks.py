"""Task encoder (GRU or per-row MLP extractor) and MDP decoders.

The encoder maps a context window (the last T transitions, rows of
[s, a, r, s']) to mixture-of-Gaussians stats: per-component means,
variances, and activations rho. The GRU variant extracts the final
hidden state and feeds one head network; the MLP variant emits stats
per row and fuses them across the window by Gaussian multiplication,
averaging the activations. Decoders reconstruct next state and reward
from (s, a, z) and carry the gradient signal that trains the encoder.
"""

from __future__ import annotations

import numpy as np

from taskmix.errors import ConfigurationError
from taskmix.inference.gaussians import sample_z
from taskmix.nn import autodiff as ad
from taskmix.nn.layers import GRU, MLP
from taskmix.nn.params import ParameterSet

VAR_FLOOR = 1e-8
RHO_LOG_FLOOR = 1e-12


class TaskEncoder:
    def __init__(self, context_dim: int, dim_z: int, components: int, c_n: int,
                 extractor: str = "gru"):
        if extractor not in ("gru", "mlp"):
            raise ConfigurationError(f"unknown extractor '{extractor}'")
        self.context_dim = context_dim
        self.dim_z = dim_z
        self.components = components
        self.hidden_dim = c_n * context_dim
        self.extractor = extractor
        head_out = components * (2 * dim_z + 1)
        if extractor == "gru":
            self.gru = GRU("encoder.gru", context_dim, self.hidden_dim)
            self.head = MLP("encoder.head", self.hidden_dim, [self.hidden_dim], head_out)
        else:
            self.row_net = MLP("encoder.rows", context_dim,
                               [self.hidden_dim, self.hidden_dim], head_out)

    def register(self, params: ParameterSet, rng: np.random.Generator) -> None:
        if self.extractor == "gru":
            self.gru.register(params, "encoder", rng)
            self.head.register(params, "encoder", rng)
        else:
            self.row_net.register(params, "encoder", rng)

    # ------------------------------------------------------------ tape path

    def _split_head(self, raw: ad.Node, n: int):
        K, dz = self.components, self.dim_z
        blocks = ad.reshape(raw, (n, K, 2 * dz + 1), name="encoder.head.blocks")
        mu = blocks[:, :, :dz]
        var = ad.add(ad.softplus(blocks[:, :, dz:2 * dz], name="encoder.head.var"),
                     VAR_FLOOR)
        logits = blocks[:, :, 2 * dz]
        rho = ad.softmax(logits, axis=1, name="encoder.head.rho")
        return mu, var, rho, logits

    def head_stats(self, p: dict, features: ad.Node):
        """Mixture stats from an extracted feature batch (n, hidden)."""
        raw = self.head(p, features)
        return self._split_head(raw, features.value.shape[0])

    def stats(self, p: dict, windows: np.ndarray, mask: np.ndarray):
        """Mixture stats (mu, var, rho, logits) for a window batch.

        Returns tape Nodes; mu/var are (n, K, dim_z), rho/logits (n, K).
        """
        n, T, row_dim = windows.shape
        if row_dim != self.context_dim:
            raise ConfigurationError(
                f"context rows have dim {row_dim}, expected {self.context_dim}")
        if self.extractor == "gru":
            feats = self.gru(p, windows, mask)
            return self.head_stats(p, feats)

        if (~mask.any(axis=1)).any():
            raise ConfigurationError("MLP extractor needs at least one context row")
        K, dz = self.components, self.dim_z
        raw = self.row_net(p, ad.as_node(windows.reshape(n * T, row_dim)))
        blocks = ad.reshape(raw, (n, T, K, 2 * dz + 1), name="encoder.rows.blocks")
        mu_rows = blocks[:, :, :, :dz]
        var_rows = ad.add(ad.softplus(blocks[:, :, :, dz:2 * dz],
                                      name="encoder.rows.var"), VAR_FLOOR)
        rho_rows = ad.softmax(blocks[:, :, :, 2 * dz], axis=2, name="encoder.rows.rho")

        live = mask[:, :, None, None].astype(np.float64)
        # product of per-row Gaussians in precision form (pairwise-equivalent)
        precision = ad.sum_(ad.div(live, var_rows), axis=1, name="encoder.fuse.prec")
        var = ad.div(1.0, precision, name="encoder.fuse.var")
        mu = ad.mul(ad.sum_(ad.div(ad.mul(live, mu_rows), var_rows), axis=1), var,
                    name="encoder.fuse.mu")
        live_k = mask[:, :, None].astype(np.float64)
        rho_sum = ad.sum_(ad.mul(live_k, rho_rows), axis=1)
        rho = ad.div(rho_sum, ad.sum_(rho_sum, axis=1, keepdims=True),
                     name="encoder.fuse.rho")
        logits = ad.log(ad.add(rho, RHO_LOG_FLOOR), name="encoder.fuse.logits")
        return mu, var, rho, logits

    def embed(self, p: dict, windows: np.ndarray, mask: np.ndarray,
              rng: np.random.Generator | None = None, mode: str = "sample"):
        """Reparameterized embedding plus the stats it came from."""
        mu, var, rho, logits = self.stats(p, windows, mask)
        rho_x = ad.reshape(rho, (rho.value.shape[0], self.components, 1))
        if mode == "mean":
            z = ad.sum_(ad.mul(rho_x, mu), axis=1, name="encoder.z")
        elif mode == "sample":
            if rng is None:
                raise ConfigurationError("sample mode requires an rng")
            eps = rng.standard_normal(mu.value.shape)
            zeta = ad.add(mu, ad.mul(eps, ad.sqrt(var)), name="encoder.zeta")
            z = ad.sum_(ad.mul(rho_x, zeta), axis=1, name="encoder.z")
        else:
            raise ConfigurationError(f"unknown sampling mode '{mode}'")
        return z, (mu, var, rho, logits)

    # -------------------------------------------------------- no-grad paths

    def stats_arrays(self, params, windows: np.ndarray, mask: np.ndarray):
        if self.extractor == "gru":
            if windows.shape[2] != self.context_dim:
                raise ConfigurationError(
                    f"context rows have dim {windows.shape[2]}, "
                    f"expected {self.context_dim}")
            # skip the cached sequence kernel: no gradients are needed here
            feats = self.gru.forward_last(params, windows, mask)

            def comp(p):
                return self.head_stats(p, ad.as_node(feats))
            return ad.evaluate(comp, params)

        def comp(p):
            return self.stats(p, windows, mask)
        return ad.evaluate(comp, params)

    def embed_arrays(self, params, windows: np.ndarray, mask: np.ndarray,
                     mode: str = "mean", rng: np.random.Generator | None = None):
        mu, var, rho, _ = self.stats_arrays(params, windows, mask)
        return sample_z(mu, var, rho, rng=rng, mode=mode)

    # ---------------------------------------- incremental rollout encoding

    def init_hidden(self, n: int) -> np.ndarray:
        if self.extractor != "gru":
            raise ConfigurationError("incremental encoding needs the GRU extractor")
        return np.zeros((n, self.hidden_dim))

    def step_hidden(self, params, ctx_rows: np.ndarray, h: np.ndarray) -> np.ndarray:
        return self.gru.cell(params, ctx_rows, h)

    def embed_hidden(self, params, h: np.ndarray, mode: str = "mean",
                     rng: np.random.Generator | None = None) -> np.ndarray:
        def comp(p):
            return self.head_stats(p, ad.as_node(h))
        mu, var, rho, _ = ad.evaluate(comp, params)
        return sample_z(mu, var, rho, rng=rng, mode=mode)


class Decoders:
    """Dynamics and reward regressors conditioned on the task embedding."""

    def __init__(self, obs_dim: int, action_dim: int, dim_z: int, c_n: int):
        in_dim = obs_dim + action_dim + dim_z
        width = c_n * in_dim
        self.obs_dim = obs_dim
        self.dynamics = MLP("decoder.dynamics", in_dim, [width, width], obs_dim)
        self.reward = MLP("decoder.reward", in_dim, [width, width, width], 1)

    def register(self, params: ParameterSet, rng: np.random.Generator) -> None:
        self.dynamics.register(params, "decoder", rng)
        self.reward.register(params, "decoder", rng)

    def _inputs(self, s, a, z):
        return ad.concat([ad.as_node(s), ad.as_node(a), ad.as_node(z)], axis=1,
                         name="decoder.inputs")

    def predict_dynamics(self, p: dict, s, a, z) -> ad.Node:
        return self.dynamics(p, self._inputs(s, a, z))

    def predict_reward(self, p: dict, s, a, z) -> ad.Node:
        out = self.reward(p, self._inputs(s, a, z))
        return ad.reshape(out, (out.value.shape[0],), name="decoder.reward.flat")
