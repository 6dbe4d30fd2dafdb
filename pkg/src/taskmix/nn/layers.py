"""Network building blocks wired into the autodiff tape.

Weights initialise uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases
at zero. Layers hold only names and shapes; values live in a
ParameterSet so checkpointing and optimisation see one flat namespace.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from taskmix.errors import ConfigurationError
from taskmix.nn import autodiff as ad
from taskmix.nn import kernels as K
from taskmix.nn.params import ParameterSet


def _init_weight(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear:
    def __init__(self, name: str, in_dim: int, out_dim: int):
        self.name = name
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.w_name = f"{name}.w"
        self.b_name = f"{name}.b"

    def register(self, params: ParameterSet, owner: str, rng: np.random.Generator):
        params.add(self.w_name, _init_weight(rng, self.in_dim, (self.in_dim, self.out_dim)),
                   owner)
        params.add(self.b_name, np.zeros(self.out_dim), owner)

    def __call__(self, p: dict, x):
        y = ad.matmul(x, p[self.w_name], name=self.w_name)
        return ad.add(y, p[self.b_name], name=self.b_name)


class MLP:
    """Stack of Linear layers with ReLU between them, linear output."""

    def __init__(self, name: str, in_dim: int, hidden: Sequence[int], out_dim: int):
        if in_dim <= 0 or out_dim <= 0 or any(h <= 0 for h in hidden):
            raise ConfigurationError(f"bad MLP dims for '{name}': "
                                     f"{in_dim} -> {list(hidden)} -> {out_dim}")
        self.name = name
        dims = [in_dim, *hidden, out_dim]
        self.layers = [Linear(f"{name}.l{i}", dims[i], dims[i + 1])
                       for i in range(len(dims) - 1)]

    def register(self, params: ParameterSet, owner: str, rng: np.random.Generator):
        for layer in self.layers:
            layer.register(params, owner, rng)

    def __call__(self, p: dict, x):
        h = x
        for layer in self.layers[:-1]:
            h = ad.relu(layer(p, h), name=f"{layer.name}.relu")
        return self.layers[-1](p, h)


def gru_sequence(w: ad.Node, u: ad.Node, b: ad.Node, xs: np.ndarray,
                 mask: np.ndarray, name: str = "gru") -> ad.Node:
    """Run the fused GRU kernel over (n, T, D) inputs as one tape primitive.

    `mask[i, t]` False marks padded steps whose hidden state passes
    through. Inputs are data, not Nodes: gradients flow only to weights.
    Returns the final hidden state (n, H).
    """
    xs_t = np.ascontiguousarray(np.swapaxes(xs, 0, 1))
    mask_t = np.ascontiguousarray(np.swapaxes(mask, 0, 1).astype(bool))
    h_last, cache = K.gru_forward(xs_t, mask_t, w.value, u.value, b.value)

    state = {}

    def grads_for(which):
        def vjp(g):
            if "result" not in state:
                state["result"] = K.gru_backward(xs_t, mask_t, w.value, u.value,
                                                 b.value, cache, g)
            return state["result"][which]
        return vjp

    return ad.custom(h_last, (w, u, b),
                     (grads_for(0), grads_for(1), grads_for(2)), name)


class GRU:
    """Single-layer GRU consuming a padded batch of sequences."""

    def __init__(self, name: str, in_dim: int, hidden_dim: int):
        if in_dim <= 0 or hidden_dim <= 0:
            raise ConfigurationError(f"bad GRU dims for '{name}': {in_dim}, {hidden_dim}")
        self.name = name
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim
        self.w_name = f"{name}.w"
        self.u_name = f"{name}.u"
        self.b_name = f"{name}.b"

    def register(self, params: ParameterSet, owner: str, rng: np.random.Generator):
        h = self.hidden_dim
        params.add(self.w_name, _init_weight(rng, self.in_dim, (self.in_dim, 3 * h)), owner)
        params.add(self.u_name, _init_weight(rng, h, (h, 3 * h)), owner)
        params.add(self.b_name, np.zeros(3 * h), owner)

    def __call__(self, p: dict, xs: np.ndarray, mask: np.ndarray) -> ad.Node:
        return gru_sequence(p[self.w_name], p[self.u_name], p[self.b_name],
                            xs, mask, name=self.name)

    def forward_last(self, params, xs: np.ndarray, mask: np.ndarray) -> np.ndarray:
        """Gradient-free final hidden state, for action selection loops."""
        xs_t = np.ascontiguousarray(np.swapaxes(xs, 0, 1))
        mask_t = np.ascontiguousarray(np.swapaxes(mask, 0, 1).astype(bool))
        return K.gru_forward_last(xs_t, mask_t, params[self.w_name],
                                  params[self.u_name], params[self.b_name])

    def cell(self, params, x: np.ndarray, h: np.ndarray) -> np.ndarray:
        """Gradient-free single step, for incremental rollout encoding."""
        return K.gru_cell(np.ascontiguousarray(x), h, params[self.w_name],
                          params[self.u_name], params[self.b_name])
