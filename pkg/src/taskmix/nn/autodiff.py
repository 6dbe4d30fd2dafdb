"""Reverse-mode automatic differentiation over float64 numpy arrays.

Graphs are built eagerly: every op returns a `Node` holding the forward
value plus vector-Jacobian closures back to its parents. `backward` walks
the graph once from a scalar root. Everything is double precision so the
finite-difference checks in the test suite are meaningful.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from taskmix.errors import NumericFaultError

_CHECK_FINITE = True


def set_finite_checks(enabled: bool) -> bool:
    """Toggle per-op non-finite detection. Returns the previous setting."""
    global _CHECK_FINITE
    previous = _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)
    return previous


def _as_array(x) -> np.ndarray:
    if isinstance(x, np.ndarray) and x.dtype == np.float64:
        return x
    return np.asarray(x, dtype=np.float64)


class Node:
    """One value in the computation graph."""

    __slots__ = ("value", "parents", "vjps", "requires_grad", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None,
                 parents: tuple = (), vjps: tuple = ()):
        self.value = _as_array(value)
        self.parents = parents
        self.vjps = vjps
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = self.name or "node"
        return f"<Node {tag} shape={self.value.shape} grad={self.requires_grad}>"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def __pow__(self, p):
        if p == 2:
            return square(self)
        raise NotImplementedError("only **2 is supported; use explicit ops")


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def _all_finite(value: np.ndarray) -> bool:
    # a single sum reduction: any nan/inf contaminates it (inf pairs give
    # nan), and finite data only overflows at ~1e308 magnitudes
    return bool(np.isfinite(value.sum()))


def _make(value: np.ndarray, parents: Sequence[Node], vjps: Sequence, name: str) -> Node:
    if _CHECK_FINITE and not _all_finite(value):
        raise NumericFaultError(f"non-finite values produced by '{name}'")
    rg = any(p.requires_grad for p in parents)
    if not rg:
        return Node(value, name=name)
    return Node(value, requires_grad=True, name=name, parents=tuple(parents), vjps=tuple(vjps))


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------- primitives

def add(a, b, name: str = "add") -> Node:
    a, b = as_node(a), as_node(b)
    out = a.value + b.value
    return _make(out, (a, b),
                 (lambda g: _unbroadcast(g, a.value.shape),
                  lambda g: _unbroadcast(g, b.value.shape)), name)


def sub(a, b, name: str = "sub") -> Node:
    a, b = as_node(a), as_node(b)
    out = a.value - b.value
    return _make(out, (a, b),
                 (lambda g: _unbroadcast(g, a.value.shape),
                  lambda g: _unbroadcast(-g, b.value.shape)), name)


def mul(a, b, name: str = "mul") -> Node:
    a, b = as_node(a), as_node(b)
    out = a.value * b.value
    return _make(out, (a, b),
                 (lambda g: _unbroadcast(g * b.value, a.value.shape),
                  lambda g: _unbroadcast(g * a.value, b.value.shape)), name)


def div(a, b, name: str = "div") -> Node:
    a, b = as_node(a), as_node(b)
    out = a.value / b.value
    return _make(out, (a, b),
                 (lambda g: _unbroadcast(g / b.value, a.value.shape),
                  lambda g: _unbroadcast(-g * out / b.value, b.value.shape)), name)


def neg(a, name: str = "neg") -> Node:
    a = as_node(a)
    return _make(-a.value, (a,), (lambda g: -g,), name)


def matmul(a, b, name: str = "matmul") -> Node:
    a, b = as_node(a), as_node(b)
    out = a.value @ b.value
    return _make(out, (a, b),
                 (lambda g: g @ b.value.T,
                  lambda g: a.value.T @ g), name)


def square(a, name: str = "square") -> Node:
    a = as_node(a)
    return _make(a.value * a.value, (a,), (lambda g: 2.0 * a.value * g,), name)


def sqrt(a, name: str = "sqrt") -> Node:
    a = as_node(a)
    out = np.sqrt(a.value)
    return _make(out, (a,), (lambda g: 0.5 * g / out,), name)


def exp(a, name: str = "exp") -> Node:
    a = as_node(a)
    out = np.exp(a.value)
    return _make(out, (a,), (lambda g: g * out,), name)


def log(a, name: str = "log") -> Node:
    a = as_node(a)
    return _make(np.log(a.value), (a,), (lambda g: g / a.value,), name)


def tanh(a, name: str = "tanh") -> Node:
    a = as_node(a)
    out = np.tanh(a.value)
    return _make(out, (a,), (lambda g: g * (1.0 - out * out),), name)


def sigmoid(a, name: str = "sigmoid") -> Node:
    a = as_node(a)
    out = 0.5 * (np.tanh(0.5 * a.value) + 1.0)
    return _make(out, (a,), (lambda g: g * out * (1.0 - out),), name)


def relu(a, name: str = "relu") -> Node:
    a = as_node(a)
    out = np.maximum(a.value, 0.0)
    return _make(out, (a,), (lambda g: g * (a.value > 0.0),), name)


def softplus(a, name: str = "softplus") -> Node:
    a = as_node(a)
    out = np.logaddexp(0.0, a.value)
    sig = 0.5 * (np.tanh(0.5 * a.value) + 1.0)
    return _make(out, (a,), (lambda g: g * sig,), name)


def clip(a, lo: float, hi: float, name: str = "clip") -> Node:
    a = as_node(a)
    out = np.clip(a.value, lo, hi)
    inside = (a.value >= lo) & (a.value <= hi)
    return _make(out, (a,), (lambda g: g * inside,), name)


def minimum(a, b, name: str = "minimum") -> Node:
    a, b = as_node(a), as_node(b)
    pick_a = a.value <= b.value
    out = np.where(pick_a, a.value, b.value)
    return _make(out, (a, b),
                 (lambda g: _unbroadcast(g * pick_a, a.value.shape),
                  lambda g: _unbroadcast(g * ~pick_a, b.value.shape)), name)


def maximum(a, b, name: str = "maximum") -> Node:
    a, b = as_node(a), as_node(b)
    pick_a = a.value >= b.value
    out = np.where(pick_a, a.value, b.value)
    return _make(out, (a, b),
                 (lambda g: _unbroadcast(g * pick_a, a.value.shape),
                  lambda g: _unbroadcast(g * ~pick_a, b.value.shape)), name)


def sum_(a, axis=None, keepdims: bool = False, name: str = "sum") -> Node:
    a = as_node(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, a.value.shape).copy()
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, a.value.shape).copy()

    return _make(out, (a,), (vjp,), name)


def mean(a, axis=None, keepdims: bool = False, name: str = "mean") -> Node:
    a = as_node(a)
    out = a.value.mean(axis=axis, keepdims=keepdims)
    count = a.value.size if axis is None else np.prod(
        [a.value.shape[ax] for ax in np.atleast_1d(axis)])

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g / count, a.value.shape).copy()
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg / count, a.value.shape).copy()

    return _make(out, (a,), (vjp,), name)


def reshape(a, shape, name: str = "reshape") -> Node:
    a = as_node(a)
    return _make(a.value.reshape(shape), (a,),
                 (lambda g: g.reshape(a.value.shape),), name)


def _is_basic_index(index) -> bool:
    """Basic indexing never visits a cell twice, so += replaces add.at."""
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (int, np.integer, slice, type(None), type(Ellipsis)))
               for p in parts)


def take(a, index, name: str = "take") -> Node:
    a = as_node(a)
    out = a.value[index]

    if _is_basic_index(index):
        def vjp(g):
            full = np.zeros_like(a.value)
            full[index] += g
            return full
    else:
        def vjp(g):
            full = np.zeros_like(a.value)
            np.add.at(full, index, g)
            return full

    return _make(out, (a,), (vjp,), name)


def concat(parts: Sequence, axis: int = -1, name: str = "concat") -> Node:
    nodes = [as_node(p) for p in parts]
    out = np.concatenate([n.value for n in nodes], axis=axis)
    sizes = [n.value.shape[axis] for n in nodes]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i):
        sl = [slice(None)] * out.ndim
        sl[axis] = slice(offsets[i], offsets[i + 1])
        sl = tuple(sl)
        return lambda g: g[sl]

    return _make(out, tuple(nodes), tuple(make_vjp(i) for i in range(len(nodes))), name)


def softmax(a, axis: int = -1, name: str = "softmax") -> Node:
    a = as_node(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return out * (g - dot)

    return _make(out, (a,), (vjp,), name)


def cross_entropy(logits, labels: np.ndarray, name: str = "cross_entropy") -> Node:
    """Mean cross-entropy of rows of `logits` against integer `labels`."""
    a = as_node(logits)
    labels = np.asarray(labels)
    n = a.value.shape[0]
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1)) + a.value.max(axis=1)
    picked = a.value[np.arange(n), labels]
    out = np.mean(lse - picked)

    def vjp(g):
        probs = np.exp(shifted)
        probs /= probs.sum(axis=1, keepdims=True)
        probs[np.arange(n), labels] -= 1.0
        return (float(g) / n) * probs

    return _make(out, (a,), (vjp,), name)


def stop_gradient(a, name: str = "stop_gradient") -> Node:
    a = as_node(a)
    return Node(a.value, name=name)


def custom(value: np.ndarray, parents: Sequence[Node], vjps: Sequence[Callable],
           name: str) -> Node:
    """Register an externally computed primitive (used by fused kernels)."""
    return _make(value, tuple(parents), tuple(vjps), name)


# ------------------------------------------------------------------ backward

def backward(root: Node) -> dict[int, np.ndarray]:
    """Gradients of the scalar `root` w.r.t. every reachable grad node.

    Returns a map keyed by ``id(node)``; callers keep their own node refs.
    """
    if root.value.size != 1:
        raise ValueError(f"backward root must be scalar, got shape {root.value.shape}")
    if not root.requires_grad:
        return {}

    topo: list[Node] = []
    visited = {id(root)}
    stack: list[tuple[Node, Iterable[Node]]] = [(root, iter(root.parents))]
    while stack:
        node, it = stack[-1]
        advanced = False
        for parent in it:
            if parent.requires_grad and id(parent) not in visited:
                visited.add(id(parent))
                stack.append((parent, iter(parent.parents)))
                advanced = True
                break
        if not advanced:
            topo.append(node)
            stack.pop()

    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.value)}
    for node in reversed(topo):
        g = grads.get(id(node))
        if g is None:
            continue
        for parent, vjp in zip(node.parents, node.vjps):
            if vjp is None or not parent.requires_grad:
                continue
            contrib = vjp(g)
            if _CHECK_FINITE and not _all_finite(contrib):
                raise NumericFaultError(
                    f"non-finite gradient flowing into '{parent.name or 'node'}'")
            held = grads.get(id(parent))
            grads[id(parent)] = contrib if held is None else held + contrib
    return grads


# ----------------------------------------------------- parameter-level entry

def _wrap_params(params, requires_grad: bool, wrt=None) -> dict[str, Node]:
    items = params.items() if hasattr(params, "items") else params
    wrapped = {}
    for name, value in items:
        rg = requires_grad and (wrt is None or name in wrt)
        wrapped[name] = Node(value, requires_grad=rg, name=name)
    return wrapped


def _split_output(out):
    if isinstance(out, tuple):
        root, aux = out[0], out[1:]
    else:
        root, aux = out, ()
    if not isinstance(root, Node):
        raise TypeError("computation must return a Node (optionally with aux outputs)")
    return root, aux


def evaluate_with_gradients(computation, params, *inputs, wrt=None):
    """Run `computation(param_nodes, *inputs)` and differentiate its scalar output.

    Returns ``(outputs, grads)`` where outputs mirrors the computation's
    return value with Nodes replaced by arrays, and grads maps every
    parameter name to an array of its shape (zeros when a parameter does
    not influence the output).
    """
    pnodes = _wrap_params(params, requires_grad=True, wrt=wrt)
    root, aux = _split_output(computation(pnodes, *inputs))
    gmap = backward(root)
    grads = {}
    for name, node in pnodes.items():
        if wrt is not None and name not in wrt:
            continue
        g = gmap.get(id(node))
        grads[name] = g if g is not None else np.zeros_like(node.value)
    outputs = (root.value,) + tuple(a.value if isinstance(a, Node) else a for a in aux)
    return outputs if len(outputs) > 1 else outputs[0], grads


def evaluate(computation, params, *inputs):
    """Forward-only evaluation (no graph kept beyond the call)."""
    pnodes = _wrap_params(params, requires_grad=False)
    root, aux = _split_output(computation(pnodes, *inputs))
    outputs = (root.value,) + tuple(a.value if isinstance(a, Node) else a for a in aux)
    return outputs if len(outputs) > 1 else outputs[0]


def gradient_check(computation, params, *inputs, step: float = 1e-5,
                   n_coords: int = 20, rng: np.random.Generator | None = None,
                   wrt=None) -> float:
    """Max relative error between reverse-mode and central-difference grads.

    Coordinates are sampled uniformly over the flattened concatenation of
    the checked parameters. Relative error uses
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    rng = rng or np.random.default_rng(0)
    items = list(params.items() if hasattr(params, "items") else params)
    if wrt is not None:
        items = [(n, v) for n, v in items if n in wrt]
    _, grads = evaluate_with_gradients(computation, params, *inputs, wrt=wrt)

    sizes = np.array([v.size for _, v in items])
    if sizes.sum() == 0:
        return 0.0
    flat_choices = rng.integers(0, sizes.sum(), size=min(n_coords, int(sizes.sum())))
    bounds = np.cumsum(sizes)

    values = {name: np.array(v, dtype=np.float64, copy=True) for name, v in items}

    def forward() -> float:
        out = evaluate(computation, values.items(), *inputs)
        root = out[0] if isinstance(out, tuple) else out
        return float(np.asarray(root).item())

    worst = 0.0
    for flat in flat_choices:
        pi = int(np.searchsorted(bounds, flat, side="right"))
        name, _ = items[pi]
        local = int(flat - (bounds[pi - 1] if pi > 0 else 0))
        ref = values[name].ravel()
        saved = ref[local]
        ref[local] = saved + step
        f_plus = forward()
        ref[local] = saved - step
        f_minus = forward()
        ref[local] = saved
        numeric = (f_plus - f_minus) / (2.0 * step)
        analytic = float(grads[name].ravel()[local])
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst
