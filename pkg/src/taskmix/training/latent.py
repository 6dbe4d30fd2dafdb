"""Embedding dumps: JSONL rows of z vectors with a 2-D PCA projection."""

from __future__ import annotations

import json
import warnings

import numpy as np

PCA_RANK_TOL = 1e-12


def pca_2d(z: np.ndarray):
    """Center `z` and project onto its top two principal axes.

    Component signs are fixed by making each axis's largest-magnitude
    loading positive, so the projection is reproducible. Returns
    (projection (m, 2), explained variance ratios (2,), degenerate flag).
    """
    m, d = z.shape
    proj = np.zeros((m, 2))
    ratios = np.zeros(2)
    if m < 2 or d < 1:
        return proj, ratios, True
    centered = z - z.mean(axis=0)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    power = s ** 2
    total = power.sum()
    rank = int((s > PCA_RANK_TOL * max(s[0], 1.0)).sum())
    comps = min(2, len(s))
    for i in range(comps):
        axis = vt[i]
        if axis[np.argmax(np.abs(axis))] < 0:
            axis = -axis
        proj[:, i] = centered @ axis
        ratios[i] = power[i] / total if total > 0 else 0.0
    return proj, ratios, rank < 2


def export_latent(buffer, encoder, params, n: int, T: int, bases,
                  rng: np.random.Generator, path) -> dict:
    """Write up to `n` validation-context embeddings as JSONL.

    The first line is metadata; each following line holds one context's
    z vector, base label, task target, and PCA coordinates. Asking for
    more contexts than stored truncates with a warning.
    """
    pool = buffer.stratum_anchors("val")
    m = min(n, len(pool))
    if n > len(pool):
        warnings.warn(f"requested {n} contexts but only {len(pool)} stored; "
                      f"truncating", stacklevel=2)
    if m > 0:
        anchors = rng.choice(pool, size=m, replace=False)
        batch = buffer.context_at(anchors, T)
        z = encoder.embed_arrays(params, batch.windows, batch.mask, mode="mean")
        proj, ratios, degenerate = pca_2d(z)
    else:
        z = np.zeros((0, encoder.dim_z))
        proj, ratios, degenerate = pca_2d(z)
    meta = {
        "count": int(m),
        "requested": int(n),
        "dim_z": int(encoder.dim_z),
        "pca_explained": [float(r) for r in ratios],
        "pca_degenerate": bool(degenerate),
        "fields": ["z", "label", "base", "target", "pca"],
    }
    with open(path, "w") as f:
        f.write(json.dumps(meta, sort_keys=True) + "\n")
        for i in range(m):
            label = int(batch.labels[i])
            row = {
                "z": [float(v) for v in z[i]],
                "label": label,
                "base": bases[label] if 0 <= label < len(bases) else str(label),
                "target": float(batch.targets[i]),
                "pca": [float(proj[i, 0]), float(proj[i, 1])],
            }
            f.write(json.dumps(row, sort_keys=True) + "\n")
    return meta
