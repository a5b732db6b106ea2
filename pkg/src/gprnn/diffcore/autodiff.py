"""Gradients of objectives defined over a :class:`ParamVector`.

An objective is a callable taking ``{segment name: Node}`` and returning a
scalar :class:`Node`.  The same callable is evaluated on constant arrays by
the finite-difference checker, so it must not rely on gradient state.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import GradVector, ParamVector
from .tape import Node, NonFiniteError, backward, variable


def value_and_grad(objective, point: ParamVector, wrt=None):
    """Objective value and its reverse-mode gradient at ``point``.

    Segments outside ``wrt`` (all by default) are fed as constants and get a
    zero gradient.
    """
    wrt = set(point.names() if wrt is None else wrt)
    leaves = {}
    for name in point.names():
        arr = np.array(point.get(name))
        leaves[name] = variable(arr, name) if name in wrt else Node(arr, op=name)
    out = objective(leaves)
    if not isinstance(out, Node) or out.value.size != 1:
        raise TypeError("objective must return a scalar Node")
    grads = backward(out) if out.requires_grad else {}
    flat = np.zeros(len(point))
    for name, leaf in leaves.items():
        g = grads.get(leaf.id)
        if g is not None:
            seg = point.layout[name]
            flat[seg.offset:seg.offset + seg.size] = np.reshape(g, -1)
    return float(out.value), GradVector(flat, point.layout)


def grad(objective, point: ParamVector, wrt=None) -> GradVector:
    return value_and_grad(objective, point, wrt)[1]


def evaluate(objective, point: ParamVector) -> float:
    leaves = {name: Node(np.array(point.get(name)), op=name) for name in point.names()}
    return float(objective(leaves).value)


@dataclass
class FDReport:
    max_relative_error: float
    passed: bool
    worst_coordinate: int
    worst_segment: str
    analytic: float
    numeric: float
    nondifferentiable: tuple = ()

    def as_dict(self):
        return {
            "max_relative_error": self.max_relative_error,
            "pass": self.passed,
            "worst_coordinate": self.worst_coordinate,
            "worst_segment": self.worst_segment,
            "analytic": self.analytic,
            "numeric": self.numeric,
            "nondifferentiable": list(self.nondifferentiable),
        }


def finite_diff_check(objective, point: ParamVector, step=1e-5, tol=1e-4, wrt=None):
    """Compare the reverse-mode gradient with coordinate-wise central differences.

    Relative error per coordinate is ``|a - b| / max(|a|, |b|, 1)``.  A
    coordinate whose one-sided slopes disagree by an amount that does not
    shrink when the step is halved is flagged as a kink and fails the check.
    """
    if step <= 0 or tol <= 0:
        raise ValueError("step and tol must be positive")
    f0, g = value_and_grad(objective, point, wrt)
    base = point.values
    names = point.names()
    seg_of = np.empty(len(point), dtype=object)
    for name in names:
        seg = point.layout[name]
        seg_of[seg.offset:seg.offset + seg.size] = name
    coords = range(len(point)) if wrt is None else [
        i for i in range(len(point)) if seg_of[i] in set(wrt)]

    def f_at(i, h):
        v = base.copy()
        v[i] += h
        try:
            out = evaluate(objective, point.with_values(v))
        except (NonFiniteError, ValueError) as exc:
            raise FloatingPointError(
                f"objective is non-finite at perturbed coordinate {i} ({seg_of[i]})") from exc
        if not np.isfinite(out):
            raise FloatingPointError(
                f"objective is non-finite at perturbed coordinate {i} ({seg_of[i]})")
        return out

    worst, worst_i, worst_a, worst_n = 0.0, -1, 0.0, 0.0
    kinks = []
    for i in coords:
        fp, fm = f_at(i, step), f_at(i, -step)
        num = (fp - fm) / (2 * step)
        a = g.values[i]
        err = abs(a - num) / max(abs(a), abs(num), 1.0)
        # one-sided slope mismatch; a kink keeps it O(1) as the step shrinks
        gap = abs(fp - 2 * f0 + fm) / step
        if gap > tol:
            half = abs(f_at(i, step / 2) - 2 * f0 + f_at(i, -step / 2)) / (step / 2)
            if half > 0.75 * gap:
                kinks.append(i)
                err = max(err, gap)
        if err > worst or worst_i < 0:
            worst, worst_i, worst_a, worst_n = err, i, a, num
    passed = worst < tol and not kinks
    return FDReport(float(worst), bool(passed), int(worst_i),
                    str(seg_of[worst_i]) if worst_i >= 0 else "",
                    float(worst_a), float(worst_n), tuple(kinks))
