"""Numba GRU sequence kernel (accelerated backend).

Same contract as the numpy fallback. The recurrence runs in njit code
with fused scalar gate math (exp-based tanh/sigmoid, which beats libm
calls under numba) while the large batched weight-gradient products stay
in numpy so BLAS handles the transposed operands without copies.
No fastmath and no parallel target: results must be deterministic.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(inline="always", cache=True)
def _sigm(x):
    # branch-free via exp(-|x|): the ternaries lower to selects
    ax = -x if x < 0.0 else x
    e = math.exp(-ax)
    q = e / (1.0 + e)
    return 1.0 - q if x >= 0.0 else q


@njit(inline="always", cache=True)
def _tanh(x):
    ax = -x if x < 0.0 else x
    e = math.exp(-2.0 * ax)
    t = (1.0 - e) / (1.0 + e)
    return t if x >= 0.0 else -t


@njit(cache=True)
def _forward_core(gates_x, mask, U_ru, U_c):
    T, n, H3 = gates_x.shape
    H = H3 // 3
    r_all = np.empty((T, n, H))
    u_all = np.empty((T, n, H))
    c_all = np.empty((T, n, H))
    h_all = np.empty((T, n, H))
    h = np.zeros((n, H))
    rh = np.empty((n, H))
    for t in range(T):
        ru = np.dot(h, U_ru)
        for i in range(n):
            for j in range(H):
                r = _sigm(gates_x[t, i, j] + ru[i, j])
                u = _sigm(gates_x[t, i, H + j] + ru[i, H + j])
                r_all[t, i, j] = r
                u_all[t, i, j] = u
                rh[i, j] = r * h[i, j]
        cc = np.dot(rh, U_c)
        for i in range(n):
            if mask[t, i]:
                for j in range(H):
                    c = _tanh(gates_x[t, i, 2 * H + j] + cc[i, j])
                    c_all[t, i, j] = c
                    h[i, j] = u_all[t, i, j] * h[i, j] + (1.0 - u_all[t, i, j]) * c
            else:
                for j in range(H):
                    c_all[t, i, j] = 0.0
            for j in range(H):
                h_all[t, i, j] = h[i, j]
    return h, r_all, u_all, c_all, h_all


@njit(cache=True)
def _forward_last_core(gates_x, mask, U_ru, U_c):
    T, n, H3 = gates_x.shape
    H = H3 // 3
    h = np.zeros((n, H))
    rh = np.empty((n, H))
    u_row = np.empty(H)
    for t in range(T):
        ru = np.dot(h, U_ru)
        for i in range(n):
            for j in range(H):
                r = _sigm(gates_x[t, i, j] + ru[i, j])
                rh[i, j] = r * h[i, j]
        cc = np.dot(rh, U_c)
        for i in range(n):
            if mask[t, i]:
                for j in range(H):
                    u_row[j] = _sigm(gates_x[t, i, H + j] + ru[i, H + j])
                for j in range(H):
                    c = _tanh(gates_x[t, i, 2 * H + j] + cc[i, j])
                    h[i, j] = u_row[j] * h[i, j] + (1.0 - u_row[j]) * c
    return h


@njit(cache=True)
def _backward_core(mask, h_all, r_all, u_all, c_all, U_ru_T, U_c_T, dh_last):
    T, n, H = h_all.shape
    da_r = np.zeros((T, n, H))
    da_u = np.zeros((T, n, H))
    da_c = np.zeros((T, n, H))
    rh_all = np.empty((T, n, H))
    dh = dh_last.copy()
    du = np.empty((n, H))
    da_ru = np.empty((n, 2 * H))
    for t in range(T - 1, -1, -1):
        for i in range(n):
            if mask[t, i]:
                for j in range(H):
                    hp = h_all[t - 1, i, j] if t > 0 else 0.0
                    u = u_all[t, i, j]
                    c = c_all[t, i, j]
                    d = dh[i, j]
                    du[i, j] = d * (hp - c)
                    da_c[t, i, j] = d * (1.0 - u) * (1.0 - c * c)
                    dh[i, j] = d * u
                    rh_all[t, i, j] = r_all[t, i, j] * hp
            else:
                for j in range(H):
                    hp = h_all[t - 1, i, j] if t > 0 else 0.0
                    du[i, j] = 0.0
                    rh_all[t, i, j] = r_all[t, i, j] * hp
        d_rh = np.dot(da_c[t], U_c_T)
        for i in range(n):
            if mask[t, i]:
                for j in range(H):
                    hp = h_all[t - 1, i, j] if t > 0 else 0.0
                    r = r_all[t, i, j]
                    u = u_all[t, i, j]
                    dr = d_rh[i, j] * hp
                    da_r[t, i, j] = dr * r * (1.0 - r)
                    da_u[t, i, j] = du[i, j] * u * (1.0 - u)
                    dh[i, j] += d_rh[i, j] * r
            for j in range(H):
                da_ru[i, j] = da_r[t, i, j]
                da_ru[i, H + j] = da_u[t, i, j]
        rec = np.dot(da_ru, U_ru_T)
        for i in range(n):
            for j in range(H):
                dh[i, j] += rec[i, j]
    return da_r, da_u, da_c, rh_all


def gru_forward(xs: np.ndarray, mask: np.ndarray, W: np.ndarray, U: np.ndarray,
                b: np.ndarray):
    T, n, D = xs.shape
    H = U.shape[0]
    gates_x = (xs.reshape(T * n, D) @ W + b).reshape(T, n, 3 * H)
    U_ru = np.ascontiguousarray(U[:, :2 * H])
    U_c = np.ascontiguousarray(U[:, 2 * H:])
    h, r_all, u_all, c_all, h_all = _forward_core(gates_x, mask, U_ru, U_c)
    return h, (r_all, u_all, c_all, h_all)


def gru_forward_last(xs: np.ndarray, mask: np.ndarray, W: np.ndarray, U: np.ndarray,
                     b: np.ndarray) -> np.ndarray:
    T, n, D = xs.shape
    H = U.shape[0]
    gates_x = (xs.reshape(T * n, D) @ W + b).reshape(T, n, 3 * H)
    U_ru = np.ascontiguousarray(U[:, :2 * H])
    U_c = np.ascontiguousarray(U[:, 2 * H:])
    return _forward_last_core(gates_x, mask, U_ru, U_c)


@njit(cache=True)
def _cell_core(gates_x, h, U_ru, U_c):
    n, H = h.shape
    rh = np.empty((n, H))
    ru = np.dot(h, U_ru)
    for i in range(n):
        for j in range(H):
            r = _sigm(gates_x[i, j] + ru[i, j])
            rh[i, j] = r * h[i, j]
    cc = np.dot(rh, U_c)
    out = np.empty((n, H))
    for i in range(n):
        for j in range(H):
            u = _sigm(gates_x[i, H + j] + ru[i, H + j])
            c = _tanh(gates_x[i, 2 * H + j] + cc[i, j])
            out[i, j] = u * h[i, j] + (1.0 - u) * c
    return out


def gru_cell(x: np.ndarray, h: np.ndarray, W: np.ndarray, U: np.ndarray,
             b: np.ndarray) -> np.ndarray:
    """One unmasked step for a batch of running hidden states."""
    H = U.shape[0]
    gates_x = x @ W + b
    U_ru = np.ascontiguousarray(U[:, :2 * H])
    U_c = np.ascontiguousarray(U[:, 2 * H:])
    return _cell_core(gates_x, np.ascontiguousarray(h), U_ru, U_c)


def gru_backward(xs: np.ndarray, mask: np.ndarray, W: np.ndarray, U: np.ndarray,
                 b: np.ndarray, cache, dh_last: np.ndarray):
    T, n, D = xs.shape
    H = U.shape[0]
    r_all, u_all, c_all, h_all = cache
    U_ru_T = np.ascontiguousarray(U[:, :2 * H].T)
    U_c_T = np.ascontiguousarray(U[:, 2 * H:].T)
    da_r, da_u, da_c, rh_all = _backward_core(
        mask, h_all, r_all, u_all, c_all, U_ru_T, U_c_T,
        np.ascontiguousarray(dh_last))

    xs_flat = xs.reshape(T * n, D)
    dW = np.empty_like(W)
    dW[:, :H] = xs_flat.T @ da_r.reshape(T * n, H)
    dW[:, H:2 * H] = xs_flat.T @ da_u.reshape(T * n, H)
    dW[:, 2 * H:] = xs_flat.T @ da_c.reshape(T * n, H)
    db = np.concatenate([da_r.sum(axis=(0, 1)), da_u.sum(axis=(0, 1)),
                         da_c.sum(axis=(0, 1))])

    h_prev = np.empty((T, n, H))
    h_prev[0] = 0.0
    h_prev[1:] = h_all[:-1]
    hp_flat = h_prev.reshape(T * n, H)
    dU = np.empty_like(U)
    dU[:, :H] = hp_flat.T @ da_r.reshape(T * n, H)
    dU[:, H:2 * H] = hp_flat.T @ da_u.reshape(T * n, H)
    dU[:, 2 * H:] = rh_all.reshape(T * n, H).T @ da_c.reshape(T * n, H)
    return dW, dU, db
