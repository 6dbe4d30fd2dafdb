"""Closed-form Gaussian operations shared by the encoder variants."""

from __future__ import annotations

import numpy as np

from taskmix.errors import ConfigurationError


def gaussian_product(mu1, var1, mu2, var2):
    """Product of two diagonal Gaussians, elementwise over coordinates.

    mu = (mu1*var2 + mu2*var1) / (var1 + var2), var = var1*var2 / (var1 + var2).
    """
    mu1, var1 = np.asarray(mu1, dtype=np.float64), np.asarray(var1, dtype=np.float64)
    mu2, var2 = np.asarray(mu2, dtype=np.float64), np.asarray(var2, dtype=np.float64)
    if np.any(var1 <= 0.0) or np.any(var2 <= 0.0):
        raise ConfigurationError("gaussian_product requires positive variances")
    denom = var1 + var2
    return (mu1 * var2 + mu2 * var1) / denom, var1 * var2 / denom


def sample_z(mu: np.ndarray, var: np.ndarray, rho: np.ndarray,
             rng: np.random.Generator | None = None, mode: str = "sample") -> np.ndarray:
    """Collapse mixture stats into one embedding.

    sample: z = sum_k rho_k (mu_k + eps_k * sqrt(var_k)), eps_k iid standard
    normal per component. mean: z = sum_k rho_k mu_k. Accepts (K, dz) stats
    or batched (n, K, dz) with rho (n, K).
    """
    mu = np.asarray(mu, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    rho = np.asarray(rho, dtype=np.float64)
    rho_x = rho[..., None]
    if mode == "mean":
        return (rho_x * mu).sum(axis=-2)
    if mode != "sample":
        raise ConfigurationError(f"unknown sampling mode '{mode}'")
    if rng is None:
        raise ConfigurationError("sample mode requires an rng")
    eps = rng.standard_normal(mu.shape)
    return (rho_x * (mu + eps * np.sqrt(var))).sum(axis=-2)
