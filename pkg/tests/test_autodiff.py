"""Reverse-mode gradient correctness against central finite differences."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from taskmix.errors import NumericFaultError
from taskmix.nn import autodiff as ad

RNG = np.random.default_rng


def fd_grads(computation, params, step=1e-5):
    """Central-difference gradient of a scalar computation over a param dict."""
    out = {}
    for name in params:
        base = params[name]
        g = np.zeros_like(base)
        flat = base.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + step
            f_plus = float(ad.evaluate(computation, params.items()))
            flat[i] = saved - step
            f_minus = float(ad.evaluate(computation, params.items()))
            flat[i] = saved
            gflat[i] = (f_plus - f_minus) / (2.0 * step)
        out[name] = g
    return out


def assert_matches_fd(computation, params, tol=1e-6):
    _, analytic = ad.evaluate_with_gradients(computation, params.items())
    numeric = fd_grads(computation, params)
    for name in params:
        err = np.abs(analytic[name] - numeric[name])
        scale = np.maximum(np.abs(numeric[name]), 1.0)
        assert np.max(err / scale) < tol, f"{name}: max rel err {np.max(err / scale)}"


def test_square_value_and_gradient():
    # f(w) = w^2 at w = 3: output 9, gradient 6
    out, grads = ad.evaluate_with_gradients(
        lambda p: ad.sum_(ad.square(p["w"])), {"w": np.array([3.0])}.items())
    assert out == pytest.approx(9.0)
    assert grads["w"][0] == pytest.approx(6.0)


def test_zero_multiplier_zeroes_gradient():
    out, grads = ad.evaluate_with_gradients(
        lambda p: ad.sum_(ad.mul(p["w"], 0.0)), {"w": np.array([4.0])}.items())
    assert out == 0.0
    assert grads["w"][0] == 0.0


def test_two_layer_network_matches_fd():
    rng = RNG(0)
    params = {
        "w1": rng.standard_normal((5, 7)),
        "b1": rng.standard_normal(7),
        "w2": rng.standard_normal((7, 3)),
        "b2": rng.standard_normal(3),
    }
    x = rng.standard_normal((4, 5))

    def net(p):
        h = ad.tanh(ad.add(ad.matmul(ad.as_node(x), p["w1"]), p["b1"]))
        y = ad.add(ad.matmul(h, p["w2"]), p["b2"])
        return ad.mean(ad.square(y))

    err = ad.gradient_check(net, params.items(), n_coords=10, rng=RNG(1))
    assert err < 1e-3


def test_gradient_check_quadratic_is_tight():
    err = ad.gradient_check(lambda p: ad.sum_(ad.square(p["w"])),
                            {"w": np.array([3.0])}.items())
    assert err < 1e-6


def test_gradient_check_constant_function():
    err = ad.gradient_check(lambda p: ad.as_node(1.5) + ad.mul(p["w"], 0.0),
                            {"w": np.array([2.0])}.items())
    assert err == 0.0


def test_gradient_check_rejects_bad_step():
    with pytest.raises(ValueError):
        ad.gradient_check(lambda p: ad.sum_(p["w"]),
                          {"w": np.ones(2)}.items(), step=0.0)


UNARY_CASES = [
    ("neg", ad.neg, (-4.0, 4.0)),
    ("square", ad.square, (-4.0, 4.0)),
    ("sqrt", ad.sqrt, (0.5, 4.0)),
    ("exp", ad.exp, (-2.0, 2.0)),
    ("log", ad.log, (0.5, 4.0)),
    ("tanh", ad.tanh, (-3.0, 3.0)),
    ("sigmoid", ad.sigmoid, (-3.0, 3.0)),
    ("softplus", ad.softplus, (-3.0, 3.0)),
]


@pytest.mark.parametrize("name,op,box", UNARY_CASES, ids=[c[0] for c in UNARY_CASES])
def test_unary_ops_match_fd(name, op, box):
    rng = RNG(hash(name) % 2**32)
    lo, hi = box
    x = rng.uniform(lo, hi, size=(3, 4))
    w = rng.standard_normal((3, 4))
    assert_matches_fd(lambda p: ad.sum_(ad.mul(op(p["x"]), w)), {"x": x})


def test_relu_matches_fd_away_from_kink():
    rng = RNG(3)
    x = rng.uniform(0.5, 2.0, size=(3, 4)) * rng.choice([-1.0, 1.0], size=(3, 4))
    w = rng.standard_normal((3, 4))
    assert_matches_fd(lambda p: ad.sum_(ad.mul(ad.relu(p["x"]), w)), {"x": x})


def test_clip_gradient_masks_outside():
    x = np.array([-2.0, 0.3, 5.0])
    _, grads = ad.evaluate_with_gradients(
        lambda p: ad.sum_(ad.clip(p["x"], -1.0, 1.0)), {"x": x}.items())
    assert np.array_equal(grads["x"], np.array([0.0, 1.0, 0.0]))


def test_binary_ops_match_fd():
    rng = RNG(4)
    a = rng.uniform(0.5, 2.0, size=(3, 4))
    b = rng.uniform(0.5, 2.0, size=(3, 4))
    w = rng.standard_normal((3, 4))
    for op in (ad.add, ad.sub, ad.mul, ad.div, ad.minimum, ad.maximum):
        assert_matches_fd(lambda p: ad.sum_(ad.mul(op(p["a"], p["b"]), w)),
                          {"a": a.copy(), "b": b.copy()})


def test_broadcasting_gradients_match_fd():
    rng = RNG(5)
    a = rng.standard_normal((4, 3))
    b = rng.standard_normal(3)          # row broadcast
    c = rng.standard_normal((4, 1))     # column broadcast
    w = rng.standard_normal((4, 3))

    def comp(p):
        y = ad.mul(ad.add(p["a"], p["b"]), p["c"])
        return ad.sum_(ad.mul(y, w))

    assert_matches_fd(comp, {"a": a, "b": b, "c": c})


def test_matmul_matches_fd():
    rng = RNG(6)
    params = {"a": rng.standard_normal((3, 4)), "b": rng.standard_normal((4, 2))}
    w = rng.standard_normal((3, 2))
    assert_matches_fd(lambda p: ad.sum_(ad.mul(ad.matmul(p["a"], p["b"]), w)), params)


def test_reductions_match_fd():
    rng = RNG(7)
    x = rng.standard_normal((3, 4, 2))
    cases = [
        lambda p: ad.sum_(p["x"]),
        lambda p: ad.mean(p["x"]),
        lambda p: ad.sum_(ad.square(ad.sum_(p["x"], axis=1))),
        lambda p: ad.sum_(ad.square(ad.mean(p["x"], axis=0))),
        lambda p: ad.sum_(ad.square(ad.sum_(p["x"], axis=2, keepdims=True))),
        lambda p: ad.sum_(ad.square(ad.mean(p["x"], axis=1, keepdims=True))),
    ]
    for comp in cases:
        assert_matches_fd(comp, {"x": x.copy()})


def test_reshape_and_concat_match_fd():
    rng = RNG(8)
    params = {"a": rng.standard_normal((2, 6)), "b": rng.standard_normal((2, 3))}
    w = rng.standard_normal((2, 9))

    def comp(p):
        y = ad.concat([ad.reshape(p["a"], (2, 6)), p["b"]], axis=1)
        return ad.sum_(ad.mul(y, w))

    assert_matches_fd(comp, params)


def test_take_basic_index_matches_fd():
    rng = RNG(9)
    x = rng.standard_normal((5, 4))
    w = rng.standard_normal((2, 4))
    assert_matches_fd(lambda p: ad.sum_(ad.mul(p["x"][1:3], w)), {"x": x})


def test_take_fancy_index_accumulates_repeats():
    # the same row picked twice must receive both gradient contributions
    x = np.arange(8.0).reshape(4, 2)
    idx = np.array([1, 1, 3])
    _, grads = ad.evaluate_with_gradients(
        lambda p: ad.sum_(p["x"][idx]), {"x": x}.items())
    expected = np.zeros((4, 2))
    expected[1] = 2.0
    expected[3] = 1.0
    assert np.array_equal(grads["x"], expected)


def test_take_fancy_index_matches_fd():
    rng = RNG(10)
    x = rng.standard_normal((6, 3))
    idx = np.array([0, 2, 2, 5])
    w = rng.standard_normal((4, 3))
    assert_matches_fd(lambda p: ad.sum_(ad.mul(p["x"][idx], w)), {"x": x})


def test_softmax_matches_fd():
    rng = RNG(11)
    x = rng.standard_normal((3, 5))
    w = rng.standard_normal((3, 5))
    assert_matches_fd(lambda p: ad.sum_(ad.mul(ad.softmax(p["x"], axis=1), w)),
                      {"x": x})


def test_cross_entropy_matches_fd():
    rng = RNG(12)
    x = rng.standard_normal((4, 3))
    labels = np.array([0, 2, 1, 2])
    assert_matches_fd(lambda p: ad.cross_entropy(p["x"], labels), {"x": x})


def test_cross_entropy_uniform_logits_value():
    logits = np.zeros((2, 8))
    out = ad.cross_entropy(ad.as_node(logits), np.array([3, 5]))
    assert float(out.value) == pytest.approx(np.log(8.0), abs=1e-12)


def test_reused_node_accumulates_gradient():
    # d/dx (x*x + x) = 2x + 1
    x = ad.Node(np.array([2.0]), requires_grad=True)
    out = ad.sum_(ad.add(ad.mul(x, x), x))
    grads = ad.backward(out)
    assert grads[id(x)][0] == pytest.approx(5.0)


def test_diamond_graph_gradient():
    # y = (x + x) * x = 2x^2, dy/dx = 4x
    x = ad.Node(np.array([3.0]), requires_grad=True)
    out = ad.sum_(ad.mul(ad.add(x, x), x))
    assert ad.backward(out)[id(x)][0] == pytest.approx(12.0)


def test_deep_chain_does_not_hit_recursion_limit():
    x = ad.Node(np.array([1.0]), requires_grad=True)
    y = x
    for _ in range(5000):
        y = ad.add(y, 1.0)
    grads = ad.backward(ad.sum_(y))
    assert grads[id(x)][0] == pytest.approx(1.0)


def test_backward_requires_scalar_root():
    x = ad.Node(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        ad.backward(ad.add(x, 1.0))


def test_backward_without_grad_nodes_is_empty():
    out = ad.sum_(ad.square(ad.as_node(np.ones(3))))
    assert ad.backward(out) == {}


def test_stop_gradient_blocks_flow():
    _, grads = ad.evaluate_with_gradients(
        lambda p: ad.sum_(ad.mul(ad.stop_gradient(p["w"]), p["w"])),
        {"w": np.array([3.0])}.items())
    # only the direct factor contributes: d/dw (c * w) = c = 3
    assert grads["w"][0] == pytest.approx(3.0)


def test_unused_parameter_gets_zero_gradient():
    params = {"used": np.array([2.0]), "idle": np.ones((2, 2))}
    _, grads = ad.evaluate_with_gradients(
        lambda p: ad.sum_(ad.square(p["used"])), params.items())
    assert np.array_equal(grads["idle"], np.zeros((2, 2)))
    assert grads["used"][0] == pytest.approx(4.0)


def test_wrt_limits_gradient_targets():
    params = {"a": np.array([2.0]), "b": np.array([3.0])}
    _, grads = ad.evaluate_with_gradients(
        lambda p: ad.sum_(ad.mul(p["a"], p["b"])), params.items(), wrt={"a"})
    assert set(grads) == {"a"}
    assert grads["a"][0] == pytest.approx(3.0)


def test_forward_overflow_raises_numeric_fault():
    with np.errstate(over="ignore"), pytest.raises(NumericFaultError):
        ad.exp(ad.as_node(np.array([1000.0])), name="hot.exp")


def test_forward_nan_raises_numeric_fault():
    with np.errstate(invalid="ignore"), pytest.raises(NumericFaultError):
        ad.log(ad.as_node(np.array([-1.0])))


def test_fault_message_names_the_layer():
    with np.errstate(over="ignore"), pytest.raises(NumericFaultError, match="hot.exp"):
        ad.exp(ad.as_node(np.array([2000.0])), name="hot.exp")


def test_backward_nonfinite_gradient_raises():
    x = ad.Node(np.array([0.0]), requires_grad=True, name="x")
    with np.errstate(divide="ignore"):
        out = ad.sum_(ad.sqrt(x))  # d sqrt/dx at 0 is infinite
        with pytest.raises(NumericFaultError):
            ad.backward(out)


def test_finite_checks_can_be_disabled():
    previous = ad.set_finite_checks(False)
    try:
        with np.errstate(over="ignore"):
            node = ad.exp(ad.as_node(np.array([1000.0])))
        assert np.isinf(node.value[0])
    finally:
        ad.set_finite_checks(previous)
    with np.errstate(over="ignore"), pytest.raises(NumericFaultError):
        ad.exp(ad.as_node(np.array([1000.0])))


def test_evaluate_returns_aux_values():
    def comp(p):
        y = ad.sum_(ad.square(p["w"]))
        return y, ad.mul(p["w"], 2.0), "tag"

    out = ad.evaluate(comp, {"w": np.array([3.0])}.items())
    assert out[0] == pytest.approx(9.0)
    assert np.array_equal(out[1], np.array([6.0]))
    assert out[2] == "tag"


def test_forward_evaluation_is_deterministic():
    rng = RNG(13)
    params = {"w": rng.standard_normal((4, 4))}
    comp = lambda p: ad.sum_(ad.tanh(ad.matmul(p["w"], p["w"])))
    a = float(ad.evaluate(comp, params.items()))
    b = float(ad.evaluate(comp, params.items()))
    assert a == b


def test_operator_sugar_matches_functions():
    a = ad.as_node(np.array([1.0, 2.0]))
    b = ad.as_node(np.array([3.0, 4.0]))
    assert np.array_equal((a + b).value, ad.add(a, b).value)
    assert np.array_equal((a - b).value, ad.sub(a, b).value)
    assert np.array_equal((a * b).value, ad.mul(a, b).value)
    assert np.array_equal((a / b).value, ad.div(a, b).value)
    assert np.array_equal((-a).value, ad.neg(a).value)
    assert np.array_equal((a ** 2).value, ad.square(a).value)
    m = ad.as_node(np.ones((2, 2)))
    assert np.array_equal((m @ m).value, ad.matmul(m, m).value)


@given(st.lists(st.floats(-50.0, 50.0), min_size=2, max_size=6))
@settings(max_examples=50, deadline=None)
def test_softmax_output_is_simplex(values):
    out = ad.softmax(ad.as_node(np.array(values)), axis=0).value
    assert np.all(out >= 0.0)
    assert float(out.sum()) == pytest.approx(1.0, abs=1e-9)


@given(st.lists(st.floats(-30.0, 30.0), min_size=1, max_size=8))
@settings(max_examples=50, deadline=None)
def test_sigmoid_tanh_identity(values):
    x = np.array(values)
    sig = ad.sigmoid(ad.as_node(x)).value
    ref = 1.0 / (1.0 + np.exp(-x))
    assert np.allclose(sig, ref, atol=1e-12)
    assert np.all((sig >= 0.0) & (sig <= 1.0))


@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 1))
@settings(max_examples=40, deadline=None)
def test_broadcast_add_gradient_sums_over_axis(rows, cols, which):
    # grad wrt a broadcast vector is the column/row sum of the upstream grad
    rng = RNG(rows * 17 + cols * 3 + which)
    w = rng.standard_normal((rows, cols))
    vec = rng.standard_normal(cols if which else (rows, 1))

    def comp(p):
        return ad.sum_(ad.mul(ad.add(ad.as_node(np.zeros((rows, cols))), p["v"]), w))

    _, grads = ad.evaluate_with_gradients(comp, {"v": vec}.items())
    expected = w.sum(axis=0) if which else w.sum(axis=1, keepdims=True)
    assert np.allclose(grads["v"], expected, atol=1e-12)
