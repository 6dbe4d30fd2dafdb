"""Pure-numpy GRU sequence kernel (fallback backend).

Layout is time-major: inputs are (T, n, D), hidden caches are (T, n, H).
`mask[t, i]` False means row i carries no observation at step t and the
hidden state passes through unchanged. Gate order in the fused weight
matrices is reset | update | candidate.

Gate nonlinearities are built from np.exp (SIMD-vectorized for float64
here, unlike np.tanh) in forms that saturate cleanly at both tails:
1/(1+exp(-x)) and 2/(1+exp(-2x))-1 overflow harmlessly to the correct
limits, so the overflow warning is suppressed. The recurrence reuses
preallocated step buffers; per-step temporaries dominate the cost at
training batch sizes otherwise.
"""

from __future__ import annotations

import numpy as np


def _sigmoid(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def _tanh(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return 2.0 / (1.0 + np.exp(-2.0 * x)) - 1.0


def _sigmoid_inplace(x: np.ndarray) -> np.ndarray:
    np.negative(x, out=x)
    np.exp(x, out=x)
    x += 1.0
    np.reciprocal(x, out=x)
    return x


def _tanh_inplace(x: np.ndarray) -> np.ndarray:
    x *= -2.0
    np.exp(x, out=x)
    x += 1.0
    np.reciprocal(x, out=x)
    x *= 2.0
    x -= 1.0
    return x


def gru_forward(xs: np.ndarray, mask: np.ndarray, W: np.ndarray, U: np.ndarray,
                b: np.ndarray):
    T, n, D = xs.shape
    H = U.shape[0]
    gates_x = xs.reshape(T * n, D) @ W
    gates_x += b
    gates_x = gates_x.reshape(T, n, 3 * H)

    r_all = np.empty((T, n, H))
    u_all = np.empty((T, n, H))
    c_all = np.empty((T, n, H))
    h_all = np.empty((T, n, H))

    U_ru = np.ascontiguousarray(U[:, :2 * H])
    U_c = np.ascontiguousarray(U[:, 2 * H:])
    h = np.zeros((n, H))
    ru = np.empty((n, 2 * H))
    rh = np.empty((n, H))
    tmp = np.empty((n, H))
    with np.errstate(over="ignore"):
        for t in range(T):
            np.dot(h, U_ru, out=ru)
            ru += gates_x[t, :, :2 * H]
            _sigmoid_inplace(ru)
            r = ru[:, :H]
            u = ru[:, H:]
            np.multiply(r, h, out=rh)
            c = c_all[t]
            np.dot(rh, U_c, out=c)
            c += gates_x[t, :, 2 * H:]
            _tanh_inplace(c)
            r_all[t] = r
            u_all[t] = u
            # h <- u*h + (1-u)*c on live rows, pass-through elsewhere
            np.subtract(h, c, out=tmp)
            tmp *= u
            tmp += c
            np.copyto(h, tmp, where=mask[t][:, None])
            h_all[t] = h
    return h.copy(), (r_all, u_all, c_all, h_all)


def gru_forward_last(xs: np.ndarray, mask: np.ndarray, W: np.ndarray, U: np.ndarray,
                     b: np.ndarray) -> np.ndarray:
    T, n, D = xs.shape
    H = U.shape[0]
    gates_x = xs.reshape(T * n, D) @ W
    gates_x += b
    gates_x = gates_x.reshape(T, n, 3 * H)
    U_ru = np.ascontiguousarray(U[:, :2 * H])
    U_c = np.ascontiguousarray(U[:, 2 * H:])
    h = np.zeros((n, H))
    ru = np.empty((n, 2 * H))
    rh = np.empty((n, H))
    c = np.empty((n, H))
    tmp = np.empty((n, H))
    with np.errstate(over="ignore"):
        for t in range(T):
            np.dot(h, U_ru, out=ru)
            ru += gates_x[t, :, :2 * H]
            _sigmoid_inplace(ru)
            np.multiply(ru[:, :H], h, out=rh)
            np.dot(rh, U_c, out=c)
            c += gates_x[t, :, 2 * H:]
            _tanh_inplace(c)
            np.subtract(h, c, out=tmp)
            tmp *= ru[:, H:]
            tmp += c
            np.copyto(h, tmp, where=mask[t][:, None])
    return h


def gru_cell(x: np.ndarray, h: np.ndarray, W: np.ndarray, U: np.ndarray,
             b: np.ndarray) -> np.ndarray:
    """One unmasked step for a batch of running hidden states."""
    H = U.shape[0]
    gx = x @ W + b
    ru = h @ U[:, :2 * H]
    r = _sigmoid(gx[:, :H] + ru[:, :H])
    u = _sigmoid(gx[:, H:2 * H] + ru[:, H:])
    c = _tanh(gx[:, 2 * H:] + (r * h) @ U[:, 2 * H:])
    return u * h + (1.0 - u) * c


def gru_backward(xs: np.ndarray, mask: np.ndarray, W: np.ndarray, U: np.ndarray,
                 b: np.ndarray, cache, dh_last: np.ndarray):
    T, n, D = xs.shape
    H = U.shape[0]
    r_all, u_all, c_all, h_all = cache
    U_ru_T = np.ascontiguousarray(U[:, :2 * H].T)
    U_c_T = np.ascontiguousarray(U[:, 2 * H:].T)

    da_all = np.empty((T, n, 3 * H))
    rh_all = np.empty((T, n, H))
    zeros = np.zeros((n, H))
    dh = dh_last.copy()
    dh_in = np.empty((n, H))
    du = np.empty((n, H))
    dac = np.empty((n, H))
    daru = np.empty((n, 2 * H))
    d_rh = np.empty((n, H))
    rec = np.empty((n, H))
    t1 = np.empty((n, H))
    for t in range(T - 1, -1, -1):
        live = mask[t][:, None]
        h_prev = h_all[t - 1] if t > 0 else zeros
        r, u, c = r_all[t], u_all[t], c_all[t]

        np.multiply(dh, live, out=dh_in)
        np.subtract(h_prev, c, out=du)
        du *= dh_in
        # da_c = dh_in * (1-u) * (1-c^2)
        np.multiply(c, c, out=dac)
        np.subtract(1.0, dac, out=dac)
        np.subtract(1.0, u, out=t1)
        dac *= t1
        dac *= dh_in
        # pass-through rows keep dh; live rows propagate through u
        np.multiply(dh, u, out=t1)
        np.copyto(dh, t1, where=live)

        np.dot(dac, U_c_T, out=d_rh)
        da_r = daru[:, :H]
        da_u = daru[:, H:]
        np.multiply(d_rh, h_prev, out=da_r)
        da_r *= r
        np.subtract(1.0, r, out=t1)
        da_r *= t1
        np.multiply(du, u, out=da_u)
        np.subtract(1.0, u, out=t1)
        da_u *= t1
        np.multiply(d_rh, r, out=t1)
        dh += t1
        np.dot(daru, U_ru_T, out=rec)
        dh += rec

        da_all[t, :, :2 * H] = daru
        da_all[t, :, 2 * H:] = dac
        np.multiply(r, h_prev, out=rh_all[t])

    da_flat = da_all.reshape(T * n, 3 * H)
    dW = xs.reshape(T * n, D).T @ da_flat
    db = da_flat.sum(axis=0)

    h_prev_all = np.empty((T, n, H))
    h_prev_all[0] = 0.0
    h_prev_all[1:] = h_all[:-1]
    dU = np.empty_like(U)
    dU[:, :2 * H] = h_prev_all.reshape(T * n, H).T @ da_flat[:, :2 * H]
    dU[:, 2 * H:] = rh_all.reshape(T * n, H).T @ da_flat[:, 2 * H:]
    return dW, dU, db
