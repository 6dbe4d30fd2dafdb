"""Adam with per-parameter moment state, applied in place."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from taskmix.errors import ConfigurationError


@dataclass
class AdamState:
    names: tuple[str, ...]
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_init(params, names, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    state = AdamState(tuple(names), lr, beta1, beta2, eps)
    for name in state.names:
        shape = params[name].shape
        state.m[name] = np.zeros(shape)
        state.v[name] = np.zeros(shape)
    return state


def adam_step(params, grads: dict, state: AdamState) -> None:
    """One update over `state.names`; mutates the parameter arrays."""
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name in state.names:
        g = grads[name]
        p = params[name]
        if g.shape != p.shape:
            raise ConfigurationError(
                f"gradient shape {g.shape} does not match parameter "
                f"'{name}' shape {p.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
