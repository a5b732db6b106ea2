"""Differentiable primitives.

Each function accepts nodes or plain arrays and returns a :class:`Node`.
Broadcasting follows numpy; cotangents are summed back to operand shapes.
"""
from __future__ import annotations

import numpy as np

from .tape import Node, lift

LOG2PI = np.log(2.0 * np.pi)

# exp() inputs above this are clamped; every clamp increments the counter
EXP_CLAMP = 30.0
clamp_events = {"exp_clamped": 0}


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def add(a, b):
    a, b = lift(a), lift(b)
    sa, sb = a.shape, b.shape
    return Node(a.value + b.value, (a, b),
                lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b):
    a, b = lift(a), lift(b)
    sa, sb = a.shape, b.shape
    return Node(a.value - b.value, (a, b),
                lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b):
    a, b = lift(a), lift(b)
    av, bv = a.value, b.value
    return Node(av * bv, (a, b),
                lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
                "mul")


def div(a, b):
    a, b = lift(a), lift(b)
    av, bv = a.value, b.value
    out = av / bv
    return Node(out, (a, b),
                lambda g: (_unbroadcast(g / bv, av.shape),
                           _unbroadcast(-g * out / bv, bv.shape)),
                "div")


def neg(a):
    a = lift(a)
    return Node(-a.value, (a,), lambda g: (-g,), "neg")


def power(a, k):
    a = lift(a)
    av = a.value
    return Node(av ** k, (a,), lambda g: (g * k * av ** (k - 1),), f"pow{k}")


def square(a):
    a = lift(a)
    av = a.value
    return Node(av * av, (a,), lambda g: (2.0 * g * av,), "square")


def sqrt(a):
    a = lift(a)
    out = np.sqrt(a.value)
    return Node(out, (a,), lambda g: (0.5 * g / out,), "sqrt")


def exp(a):
    a = lift(a)
    out = np.exp(a.value)
    return Node(out, (a,), lambda g: (g * out,), "exp")


def exp_clamped(a, cap=EXP_CLAMP):
    """exp(min(a, cap)); clamped cells get zero gradient and are counted."""
    a = lift(a)
    over = a.value > cap
    if over.any():
        clamp_events["exp_clamped"] += int(over.sum())
    out = np.exp(np.minimum(a.value, cap))
    return Node(out, (a,), lambda g: (np.where(over, 0.0, g * out),), "exp_clamped")


def log(a):
    a = lift(a)
    av = a.value
    if np.any(av <= 0):
        return Node(np.log(np.where(av > 0, av, np.nan)), (a,), None, "log")
    return Node(np.log(av), (a,), lambda g: (g / av,), "log")


def tanh(a):
    a = lift(a)
    out = np.tanh(a.value)
    return Node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a):
    a = lift(a)
    out = _sigmoid(a.value)
    return Node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus_np(x):
    x = np.asarray(x, dtype=np.float64)
    return np.logaddexp(0.0, x)


def softplus(a):
    a = lift(a)
    av = a.value
    return Node(softplus_np(av), (a,), lambda g: (g * _sigmoid(av),), "softplus")


def abs(a):  # noqa: A001 - mirrors numpy naming
    a = lift(a)
    av = a.value
    return Node(np.abs(av), (a,), lambda g: (g * np.sign(av),), "abs")


def matmul(a, b):
    a, b = lift(a), lift(b)
    av, bv = a.value, b.value
    if av.ndim < 2 or bv.ndim < 2:
        raise ValueError("matmul operands must be at least 2-d")

    def vjp(g):
        ga = g @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ g
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return Node(av @ bv, (a, b), vjp, "matmul")


def sum(a, axis=None):  # noqa: A001
    a = lift(a)
    shape = a.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return Node(a.value.sum(axis=axis), (a,), vjp, "sum")


def mean(a, axis=None):
    a = lift(a)
    n = a.value.size if axis is None else a.shape[axis]
    return sum(a, axis) * (1.0 / n)


def reshape(a, shape):
    a = lift(a)
    old = a.shape
    return Node(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes=None):
    a = lift(a)
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    inv = np.argsort(axes)
    return Node(np.transpose(a.value, axes), (a,),
                lambda g: (np.transpose(g, inv),), "transpose")


def swapaxes(a, i, j):
    a = lift(a)
    return Node(np.swapaxes(a.value, i, j), (a,),
                lambda g: (np.swapaxes(g, i, j),), "swapaxes")


def flip(a, axis):
    a = lift(a)
    return Node(np.flip(a.value, axis).copy(), (a,),
                lambda g: (np.flip(g, axis).copy(),), "flip")


def getitem(a, idx):
    a = lift(a)
    shape = a.shape

    parts = idx if isinstance(idx, tuple) else (idx,)
    fancy = any(isinstance(i, (list, np.ndarray)) for i in parts)

    def vjp(g):
        out = np.zeros(shape)
        if fancy:
            np.add.at(out, idx, g)
        else:
            out[idx] = g
        return (out,)

    return Node(a.value[idx], (a,), vjp, "getitem")


def concat(parts, axis=0):
    parts = [lift(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Node(np.concatenate([p.value for p in parts], axis=axis),
                tuple(parts), vjp, "concat")


def stack(parts, axis=0):
    parts = [lift(p) for p in parts]

    def vjp(g):
        return tuple(np.moveaxis(g, axis, 0))

    return Node(np.stack([p.value for p in parts], axis=axis), tuple(parts), vjp, "stack")


def gaussian_logpdf(x, mean, var):
    """Elementwise log N(x; mean, var) summed to a scalar."""
    r = sub(x, mean)
    return -0.5 * sum(div(square(r), var) + log(var) + LOG2PI)
