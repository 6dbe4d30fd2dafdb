"""The numba and numpy GRU kernel builds must agree to float64 roundoff."""

import subprocess
import sys

import numpy as np
import pytest

from taskmix.nn.kernels import ACTIVE_BACKEND
from taskmix.nn.kernels import gru_numba as knb
from taskmix.nn.kernels import gru_numpy as knp

SHAPES = [
    (1, 1, 3, 4),      # single step, single sequence
    (5, 3, 4, 6),      # small
    (32, 16, 18, 36),  # training-window shape
]


def make_case(T, n, D, H, seed=0, masked=True):
    rng = np.random.default_rng(seed)
    xs = np.ascontiguousarray(rng.standard_normal((T, n, D)))
    mask = np.ones((T, n), dtype=bool)
    if masked and T > 1:
        # padded prefixes of varying length, plus one fully padded sequence
        for i in range(n):
            mask[: rng.integers(0, T), i] = False
        mask[:, 0] = False
    w = rng.standard_normal((D, 3 * H)) * 0.4
    u = rng.standard_normal((H, 3 * H)) * 0.4
    b = rng.standard_normal(3 * H) * 0.1
    return xs, mask, w, u, b


@pytest.mark.parametrize("shape", SHAPES, ids=["tiny", "small", "window"])
def test_forward_backends_agree(shape):
    xs, mask, w, u, b = make_case(*shape)
    h_np, cache_np = knp.gru_forward(xs, mask, w, u, b)
    h_nb, cache_nb = knb.gru_forward(xs, mask, w, u, b)
    assert np.allclose(h_np, h_nb, rtol=0.0, atol=1e-13)
    # gate caches are only meaningful at live steps; masked slots are
    # backend scratch space and never reach h or the gradients
    live = mask[:, :, None]
    for a, c in zip(cache_np[:3], cache_nb[:3]):
        assert np.allclose(a * live, c * live, rtol=0.0, atol=1e-13)
    assert np.allclose(cache_np[3], cache_nb[3], rtol=0.0, atol=1e-13)


@pytest.mark.parametrize("shape", SHAPES, ids=["tiny", "small", "window"])
def test_backward_backends_agree(shape):
    xs, mask, w, u, b = make_case(*shape, seed=1)
    rng = np.random.default_rng(2)
    _, cache_np = knp.gru_forward(xs, mask, w, u, b)
    _, cache_nb = knb.gru_forward(xs, mask, w, u, b)
    g = rng.standard_normal((xs.shape[1], u.shape[0]))
    grads_np = knp.gru_backward(xs, mask, w, u, b, cache_np, g)
    grads_nb = knb.gru_backward(xs, mask, w, u, b, cache_nb, g)
    for a, c in zip(grads_np, grads_nb):
        scale = max(1.0, float(np.max(np.abs(a))))
        assert np.max(np.abs(a - c)) / scale < 1e-12


def test_forward_last_matches_forward_both_backends():
    xs, mask, w, u, b = make_case(8, 5, 4, 6, seed=3)
    for mod in (knp, knb):
        h_full, _ = mod.gru_forward(xs, mask, w, u, b)
        h_last = mod.gru_forward_last(xs, mask, w, u, b)
        assert np.array_equal(h_full, h_last), mod.__name__


def test_cell_backends_agree():
    rng = np.random.default_rng(4)
    x = np.ascontiguousarray(rng.standard_normal((7, 5)))
    h = np.ascontiguousarray(rng.standard_normal((7, 9)))
    w = rng.standard_normal((5, 27))
    u = rng.standard_normal((9, 27))
    b = rng.standard_normal(27)
    a = knp.gru_cell(x, h, w, u, b)
    c = knb.gru_cell(x, h, w, u, b)
    assert np.allclose(a, c, rtol=0.0, atol=1e-13)


def test_cell_matches_forward_single_step():
    xs, mask, w, u, b = make_case(1, 4, 3, 5, seed=5, masked=False)
    h0 = np.zeros((4, 5))
    for mod in (knp, knb):
        h_seq, _ = mod.gru_forward(xs, mask, w, u, b)
        h_cell = mod.gru_cell(xs[0], h0, w, u, b)
        assert np.allclose(h_seq, h_cell, atol=1e-14), mod.__name__


def test_numpy_backward_matches_finite_differences():
    xs, mask, w, u, b = make_case(4, 3, 3, 4, seed=6)
    probe = np.random.default_rng(7).standard_normal((3, 4))

    def loss(w_, u_, b_):
        h, _ = knp.gru_forward(xs, mask, w_, u_, b_)
        return float(np.sum(h * probe))

    _, cache = knp.gru_forward(xs, mask, w, u, b)
    dW, dU, db = knp.gru_backward(xs, mask, w, u, b, cache, probe)

    step = 1e-6
    for arr, grad in ((w, dW), (u, dU), (b, db)):
        flat = arr.ravel()
        idx = np.random.default_rng(8).choice(flat.size, size=6, replace=False)
        for i in idx:
            saved = flat[i]
            flat[i] = saved + step
            f_plus = loss(w, u, b)
            flat[i] = saved - step
            f_minus = loss(w, u, b)
            flat[i] = saved
            numeric = (f_plus - f_minus) / (2.0 * step)
            analytic = grad.ravel()[i]
            assert abs(analytic - numeric) / max(abs(numeric), 1.0) < 1e-6


def test_fully_masked_input_returns_zeros():
    xs, mask, w, u, b = make_case(6, 3, 4, 5, seed=9, masked=False)
    mask[:] = False
    for mod in (knp, knb):
        h, _ = mod.gru_forward(xs, mask, w, u, b)
        assert np.array_equal(h, np.zeros((3, 5))), mod.__name__


def test_backward_ignores_masked_steps():
    # gradients must match those of the truncated unmasked sequence
    xs, mask, w, u, b = make_case(6, 2, 3, 4, seed=10, masked=False)
    mask[:2] = False  # shared padded prefix
    g = np.random.default_rng(11).standard_normal((2, 4))

    _, cache = knp.gru_forward(xs, mask, w, u, b)
    full = knp.gru_backward(xs, mask, w, u, b, cache, g)

    xs_cut = np.ascontiguousarray(xs[2:])
    mask_cut = np.ones((4, 2), dtype=bool)
    _, cache_cut = knp.gru_forward(xs_cut, mask_cut, w, u, b)
    cut = knp.gru_backward(xs_cut, mask_cut, w, u, b, cache_cut, g)

    for a, c in zip(full, cut):
        assert np.allclose(a, c, atol=1e-12)


def test_active_backend_is_valid():
    assert ACTIVE_BACKEND in ("numba", "numpy")


def test_env_flag_selects_numpy_build():
    code = ("import taskmix.nn.kernels as K; "
            "print(K.ACTIVE_BACKEND, K.gru_forward.__module__)")
    out = subprocess.run([sys.executable, "-c", code],
                         env={"PATH": "/usr/bin:/bin", "TASKMIX_BACKEND": "numpy"},
                         capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["numpy", "taskmix.nn.kernels.gru_numpy"]


def test_env_flag_rejects_unknown_backend():
    out = subprocess.run([sys.executable, "-c", "import taskmix.backend"],
                         env={"PATH": "/usr/bin:/bin", "TASKMIX_BACKEND": "torch"},
                         capture_output=True, text=True)
    assert out.returncode != 0
    assert "TASKMIX_BACKEND" in out.stderr
