"""Training objective for the task encoder and decoders.

Four terms combine into the inference loss:
  prediction      dimension-normalised next-state error plus reward error,
                  computed from the decoders on the anchor transition
  kl              activation-weighted KL of each mixture component against
                  a unit Gaussian prior
  euclid          pairwise variance-over-separation penalty that pushes
                  component means apart
  classification  cross-entropy of the component activations against the
                  window's base-family label

total = prediction + alpha * kl + beta * euclid + gamma * classification
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from taskmix.errors import ConfigurationError
from taskmix.nn import autodiff as ad

SEPARATION_FLOOR = 1e-6


@dataclass(frozen=True)
class LossWeights:
    kl: float = 0.001
    euclid: float = 5e-4
    classification: float = 0.1


def _batched(x, ndim: int):
    node = ad.as_node(x)
    if node.value.ndim == ndim - 1:
        node = ad.reshape(node, (1,) + node.value.shape)
    if node.value.ndim != ndim:
        raise ConfigurationError(f"expected {ndim - 1}- or {ndim}-d stats, "
                                 f"got shape {node.value.shape}")
    return node


def prediction_loss(p, decoders, s, a, r, s_next, z) -> ad.Node:
    """Mean reconstruction error of the anchor transition.

    State error is normalised by the observation dimension so the two
    regression targets stay on comparable scales.
    """
    s_hat = decoders.predict_dynamics(p, s, a, z)
    r_hat = decoders.predict_reward(p, s, a, z)
    ds = ad.mean(ad.sum_(ad.square(ad.sub(s_hat, s_next)), axis=1))
    dr = ad.mean(ad.square(ad.sub(r_hat, np.asarray(r).reshape(-1))))
    return ad.add(ad.mul(1.0 / decoders.obs_dim, ds), dr, name="loss.prediction")


def kl_loss(mu, var, rho) -> ad.Node:
    """Activation-weighted per-component KL against a unit Gaussian."""
    mu = _batched(mu, 3)
    var = _batched(var, 3)
    rho = _batched(rho, 2)
    per_comp = ad.mul(0.5, ad.sum_(
        ad.sub(ad.add(ad.square(mu), var), ad.add(ad.log(var), 1.0)), axis=2))
    return ad.mean(ad.sum_(ad.mul(rho, per_comp), axis=1), name="loss.kl")


def euclid_loss(mu, var) -> ad.Node:
    """Pairwise spread penalty: summed variances over squared mean distance."""
    mu = _batched(mu, 3)
    var = _batched(var, 3)
    k = mu.value.shape[1]
    if k < 2:
        warnings.warn("spread penalty needs at least two mixture components; "
                      "returning 0", stacklevel=2)
        return ad.as_node(np.zeros(()))
    total = None
    for k1 in range(k):
        for k2 in range(k1 + 1, k):
            spread = ad.add(ad.sum_(var[:, k1], axis=1), ad.sum_(var[:, k2], axis=1))
            gap = ad.sum_(ad.square(ad.sub(mu[:, k1], mu[:, k2])), axis=1)
            term = ad.div(spread, ad.maximum(gap, SEPARATION_FLOOR))
            total = term if total is None else ad.add(total, term)
    return ad.mean(total, name="loss.euclid")


def classification_loss(logits, labels, literal_rho_softmax: bool = False,
                        rho=None) -> ad.Node:
    """Cross-entropy of component activations against base-family labels.

    The default treats the pre-activation scores as logits. The literal
    variant feeds the already-normalised activations back through the
    cross-entropy softmax instead.
    """
    labels = np.asarray(labels)
    if literal_rho_softmax and rho is None:
        raise ConfigurationError("literal activation variant needs rho")
    scores = ad.as_node(rho if literal_rho_softmax else logits)
    k = scores.value.shape[1]
    if labels.min() < 0 or labels.max() >= k:
        raise ConfigurationError(
            f"labels must lie in [0, {k}), got range "
            f"[{labels.min()}, {labels.max()}]")
    return ad.cross_entropy(scores, labels, name="loss.classification")


def total_inference_loss(p, encoder, decoders, batch, weights: LossWeights,
                         rng: np.random.Generator | None = None,
                         mode: str = "sample",
                         literal_rho_softmax: bool = False):
    """Combined objective on a context batch; returns (Node, term values)."""
    z, (mu, var, rho, logits) = encoder.embed(p, batch.windows, batch.mask,
                                              rng=rng, mode=mode)
    pred = prediction_loss(p, decoders, batch.states, batch.actions,
                           batch.rewards, batch.next_states, z)
    kl = kl_loss(mu, var, rho)
    euclid = euclid_loss(mu, var)
    cls = classification_loss(logits, batch.labels,
                              literal_rho_softmax=literal_rho_softmax, rho=rho)
    total = ad.add(
        ad.add(pred, ad.mul(weights.kl, kl)),
        ad.add(ad.mul(weights.euclid, euclid), ad.mul(weights.classification, cls)),
        name="loss.total")
    parts = {
        "prediction": float(pred.value),
        "kl": float(kl.value),
        "euclid": float(euclid.value),
        "classification": float(cls.value),
        "total": float(total.value),
    }
    return total, parts


def classification_accuracy(rho: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of windows whose strongest activation matches the label."""
    rho = np.atleast_2d(np.asarray(rho))
    return float(np.mean(np.argmax(rho, axis=1) == np.asarray(labels)))
