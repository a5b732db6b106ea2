"""Dynamically built tensor tape for reverse-mode differentiation.

Every differentiable operation produces a :class:`Node` holding its value,
its parent nodes and a closure mapping the output cotangent to parent
cotangents.  Calling :func:`backward` on a scalar node walks the graph in
reverse topological order.
"""
from __future__ import annotations

import itertools

import numpy as np

_ids = itertools.count()


class NonFiniteError(FloatingPointError):
    """Raised when a graph node evaluates to NaN or infinity."""

    def __init__(self, op, node_id, detail=""):
        self.op = op
        self.node_id = node_id
        msg = f"non-finite value produced by graph node #{node_id} ({op})"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class Node:
    __slots__ = ("value", "parents", "vjp", "op", "requires_grad", "id")
    __array_priority__ = 1000

    def __init__(self, value, parents=(), vjp=None, op="const", requires_grad=None):
        value = np.asarray(value, dtype=np.float64)
        self.id = next(_ids)
        if not np.all(np.isfinite(value)):
            raise NonFiniteError(op, self.id)
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.op = op
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in parents)
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __float__(self):
        return float(self.value)

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape})"

    # arithmetic sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __pow__(self, k):
        from . import ops
        return ops.power(self, k)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __rmatmul__(self, other):
        from . import ops
        return ops.matmul(other, self)

    def __getitem__(self, idx):
        from . import ops
        return ops.getitem(self, idx)

    @property
    def T(self):
        from . import ops
        return ops.transpose(self)

    def sum(self, axis=None):
        from . import ops
        return ops.sum(self, axis)


def lift(x):
    return x if isinstance(x, Node) else Node(x)


def variable(value, name="leaf"):
    """A leaf node that gradients are accumulated into."""
    return Node(np.array(value, dtype=np.float64), op=name, requires_grad=True)


def value(x):
    return x.value if isinstance(x, Node) else np.asarray(x, dtype=np.float64)


def _toposort(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if node.id in seen:
            continue
        seen.add(node.id)
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and p.id not in seen:
                stack.append((p, False))
    return order


def backward(root):
    """Return ``{node id: gradient}`` for every node that requires grad."""
    if root.value.size != 1:
        raise ValueError("backward() needs a scalar output")
    grads = {root.id: np.ones_like(root.value)}
    for node in reversed(_toposort(root)):
        g = grads.get(node.id)
        if g is None or node.vjp is None:
            continue
        pgrads = node.vjp(g)
        for p, pg in zip(node.parents, pgrads):
            if pg is None or not p.requires_grad:
                continue
            if not np.all(np.isfinite(pg)):
                raise NonFiniteError(node.op, node.id, "in backward pass")
            if p.id in grads:
                grads[p.id] = grads[p.id] + pg
            else:
                grads[p.id] = pg
    return grads
