"""Small tape-based automatic differentiation over numpy arrays.

Only the handful of primitives needed by the networks in this package are
supported: elementwise add/sub/mul/div/neg/pow, matmul, tanh, relu, exp, log,
sum/mean reductions, reshape and basic indexing. Every primitive carries a
reverse-mode rule (vector-Jacobian product) and a forward-mode rule
(Jacobian-vector product), so one trace can serve both directions; the
Fisher-vector product relies on that.

Anything else applied to a :class:`Var` raises :class:`UnsupportedPrimitive`
instead of silently dropping out of the graph.
"""

from __future__ import annotations

from typing import Callable

import numpy as np


class UnsupportedPrimitive(TypeError):
    """Raised when a traced function uses an operation with no derivative rule."""


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class Var:
    """A node in the trace: a value plus how it was produced."""

    __slots__ = ("value", "op", "inputs", "aux")
    __array_priority__ = 1000.0

    def __init__(self, value, op=None, inputs=(), aux=None):
        self.value = np.asarray(value, dtype=float)
        self.op = op
        self.inputs = inputs
        self.aux = aux

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        name = self.op.name if self.op is not None else "leaf"
        return f"Var({name}, shape={self.shape})"

    def __float__(self):
        raise UnsupportedPrimitive("float() on a traced value would cut the gradient path")

    def __bool__(self):
        raise UnsupportedPrimitive("truth value of a traced value is not differentiable")

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return vsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return vmean(self, axis=axis, keepdims=keepdims)

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        if method == "__call__" and not kwargs:
            handler = _UFUNCS.get(ufunc.__name__)
            if handler is not None:
                return handler(*inputs)
        raise UnsupportedPrimitive(f"no derivative rule for numpy.{ufunc.__name__} ({method})")

    def __array_function__(self, func, types, args, kwargs):
        handler = _FUNCTIONS.get(func.__name__)
        if handler is not None:
            return handler(*args, **kwargs)
        raise UnsupportedPrimitive(f"no derivative rule for numpy.{func.__name__}")


def _val(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=float)


class Op:
    """A primitive: forward value plus VJP and JVP rules.

    ``vjp(g, out, vals, aux)`` returns one cotangent per input.
    ``jvp(tangents, out, vals, aux)`` receives ``None`` for constant inputs.
    """

    def __init__(self, name, forward, vjp, jvp):
        self.name = name
        self.forward = forward
        self.vjp = vjp
        self.jvp = jvp

    def __call__(self, *inputs, aux=None):
        vals = [_val(x) for x in inputs]
        out = self.forward(vals, aux)
        if not any(isinstance(x, Var) for x in inputs):
            return np.asarray(out, dtype=float)
        return Var(out, self, inputs, aux)


def _sum_tangents(ts):
    ts = [t for t in ts if t is not None]
    if not ts:
        return None
    total = ts[0]
    for t in ts[1:]:
        total = total + t
    return total


add = Op(
    "add",
    lambda v, a: v[0] + v[1],
    lambda g, o, v, a: (_unbroadcast(g, v[0].shape), _unbroadcast(g, v[1].shape)),
    lambda t, o, v, a: _sum_tangents([
        None if t[0] is None else np.broadcast_to(t[0], o.shape),
        None if t[1] is None else np.broadcast_to(t[1], o.shape),
    ]),
)

sub = Op(
    "sub",
    lambda v, a: v[0] - v[1],
    lambda g, o, v, a: (_unbroadcast(g, v[0].shape), _unbroadcast(-g, v[1].shape)),
    lambda t, o, v, a: _sum_tangents([
        None if t[0] is None else np.broadcast_to(t[0], o.shape),
        None if t[1] is None else -np.broadcast_to(t[1], o.shape),
    ]),
)

mul = Op(
    "mul",
    lambda v, a: v[0] * v[1],
    lambda g, o, v, a: (_unbroadcast(g * v[1], v[0].shape), _unbroadcast(g * v[0], v[1].shape)),
    lambda t, o, v, a: _sum_tangents([
        None if t[0] is None else t[0] * v[1],
        None if t[1] is None else v[0] * t[1],
    ]),
)

div = Op(
    "div",
    lambda v, a: v[0] / v[1],
    lambda g, o, v, a: (
        _unbroadcast(g / v[1], v[0].shape),
        _unbroadcast(-g * v[0] / v[1] ** 2, v[1].shape),
    ),
    lambda t, o, v, a: _sum_tangents([
        None if t[0] is None else t[0] / v[1],
        None if t[1] is None else -t[1] * v[0] / v[1] ** 2,
    ]),
)

neg = Op(
    "neg",
    lambda v, a: -v[0],
    lambda g, o, v, a: (-g,),
    lambda t, o, v, a: -t[0],
)

_power = Op(
    "pow",
    lambda v, a: v[0] ** a,
    lambda g, o, v, a: (g * a * v[0] ** (a - 1),),
    lambda t, o, v, a: t[0] * a * v[0] ** (a - 1),
)


def power(x, exponent):
    if isinstance(exponent, Var):
        raise UnsupportedPrimitive("only constant exponents are supported")
    return _power(x, aux=float(exponent))


def _matmul_vjp(g, o, v, a):
    x, w = v
    if x.ndim == 1 and w.ndim == 1:
        return g * w, g * x
    if x.ndim == 1:
        return w @ g, np.outer(x, g)
    if w.ndim == 1:
        return np.outer(g, w), x.T @ g
    return g @ w.T, x.T @ g


matmul = Op(
    "matmul",
    lambda v, a: v[0] @ v[1],
    _matmul_vjp,
    lambda t, o, v, a: _sum_tangents([
        None if t[0] is None else t[0] @ v[1],
        None if t[1] is None else v[0] @ t[1],
    ]),
)

tanh = Op(
    "tanh",
    lambda v, a: np.tanh(v[0]),
    lambda g, o, v, a: (g * (1.0 - o * o),),
    lambda t, o, v, a: t[0] * (1.0 - o * o),
)

relu = Op(
    "relu",
    lambda v, a: np.maximum(v[0], 0.0),
    lambda g, o, v, a: (g * (v[0] > 0),),
    lambda t, o, v, a: t[0] * (v[0] > 0),
)

exp = Op(
    "exp",
    lambda v, a: np.exp(v[0]),
    lambda g, o, v, a: (g * o,),
    lambda t, o, v, a: t[0] * o,
)

log = Op(
    "log",
    lambda v, a: np.log(v[0]),
    lambda g, o, v, a: (g / v[0],),
    lambda t, o, v, a: t[0] / v[0],
)


def _sum_vjp(g, o, v, a):
    axis, keepdims = a
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, v[0].shape).copy(),)


_sum = Op(
    "sum",
    lambda v, a: np.sum(v[0], axis=a[0], keepdims=a[1]),
    _sum_vjp,
    lambda t, o, v, a: np.sum(t[0], axis=a[0], keepdims=a[1]),
)


def vsum(x, axis=None, keepdims=False):
    return _sum(x, aux=(axis, keepdims))


def vmean(x, axis=None, keepdims=False):
    shape = _val(x).shape
    count = int(np.prod(shape)) if axis is None else int(np.prod([shape[i] for i in np.atleast_1d(axis)]))
    return vsum(x, axis=axis, keepdims=keepdims) / float(count)


_reshape = Op(
    "reshape",
    lambda v, a: np.reshape(v[0], a),
    lambda g, o, v, a: (np.reshape(g, v[0].shape),),
    lambda t, o, v, a: np.reshape(t[0], a),
)


def reshape(x, shape):
    return _reshape(x, aux=tuple(shape))


def _is_basic_index(index):
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (slice, int, np.integer)) or p is Ellipsis or p is None for p in parts)


def _getitem_vjp(g, o, v, a):
    full = np.zeros_like(v[0])
    if _is_basic_index(a):
        full[a] = g
    else:
        np.add.at(full, a, g)
    return (full,)


_getitem = Op(
    "getitem",
    lambda v, a: v[0][a],
    _getitem_vjp,
    lambda t, o, v, a: t[0][a],
)


def getitem(x, index):
    return _getitem(x, aux=index)


_UFUNCS = {
    "add": add,
    "subtract": sub,
    "multiply": mul,
    "true_divide": div,
    "divide": div,
    "negative": neg,
    "matmul": matmul,
    "tanh": tanh,
    "exp": exp,
    "log": log,
}

_FUNCTIONS = {
    "sum": lambda x, axis=None, keepdims=False: vsum(x, axis=axis, keepdims=keepdims),
    "mean": lambda x, axis=None, keepdims=False: vmean(x, axis=axis, keepdims=keepdims),
    "reshape": lambda x, shape: reshape(x, shape),
    "dot": lambda x, y: matmul(x, y),
}


def _toposort(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.inputs:
            if isinstance(parent, Var) and id(parent) not in seen:
                stack.append((parent, False))
    return order


class Trace:
    """A recorded evaluation of ``fn`` at ``x`` supporting repeated VJPs and JVPs."""

    def __init__(self, fn: Callable, x):
        self.leaf = Var(np.array(x, dtype=float, copy=True))
        out = fn(self.leaf)
        if not isinstance(out, Var):
            out = Var(out)
        self.out = out
        self.order = _toposort(out)

    @property
    def value(self):
        return self.out.value

    def vjp(self, cotangent) -> np.ndarray:
        grads = {id(self.out): np.broadcast_to(np.asarray(cotangent, dtype=float), self.out.shape)}
        for node in reversed(self.order):
            g = grads.pop(id(node), None)
            if g is None or node.op is None:
                if node is self.leaf and g is not None:
                    grads[id(node)] = g
                continue
            vals = [_val(x) for x in node.inputs]
            for parent, pg in zip(node.inputs, node.op.vjp(g, node.value, vals, node.aux)):
                if not isinstance(parent, Var):
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg
        g = grads.get(id(self.leaf))
        if g is None:
            return np.zeros_like(self.leaf.value)
        return np.array(g, dtype=float)

    def jvp(self, tangent) -> np.ndarray:
        tangents = {id(self.leaf): np.asarray(tangent, dtype=float).reshape(self.leaf.shape)}
        for node in self.order:
            if node.op is None:
                continue
            ts = [tangents.get(id(x)) if isinstance(x, Var) else None for x in node.inputs]
            if all(t is None for t in ts):
                continue
            vals = [_val(x) for x in node.inputs]
            t = node.op.jvp(ts, node.value, vals, node.aux)
            if t is not None:
                tangents[id(node)] = np.asarray(t, dtype=float)
        t = tangents.get(id(self.out))
        if t is None:
            return np.zeros_like(self.out.value)
        return np.broadcast_to(t, self.out.shape).copy()


def value_and_grad(fn: Callable, x):
    """Evaluate scalar ``fn`` at ``x`` and its gradient with respect to ``x``."""
    trace = Trace(fn, x)
    if trace.out.value.size != 1:
        raise ValueError(f"gradient requires a scalar output, got shape {trace.out.shape}")
    return float(trace.value), trace.vjp(np.ones_like(trace.value))


def grad(fn: Callable, x) -> np.ndarray:
    return value_and_grad(fn, x)[1]


def jvp(fn: Callable, x, tangent):
    trace = Trace(fn, x)
    return trace.value.copy(), trace.jvp(tangent)


def vjp(fn: Callable, x, cotangent):
    trace = Trace(fn, x)
    return trace.value.copy(), trace.vjp(cotangent)
