from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .params import GradVector, ParamVector

DEFAULT_CLIP_NORM = 5.0


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    hyper: AdamHyper = field(default_factory=AdamHyper)

    @classmethod
    def zeros(cls, params, **hyper):
        n = len(params)
        return cls(np.zeros(n), np.zeros(n), 0, AdamHyper(**hyper))


def adam_step(params: ParamVector, grads: GradVector, state: AdamState,
              mask=None):
    """One bias-corrected Adam update that *ascends* the objective.

    ``mask`` optionally restricts the update (and moment updates) to a
    boolean subset of coordinates; the step counter still advances.
    """
    if not params.same_layout(grads) or state.m.size != len(params):
        raise ValueError("parameter, gradient and optimizer layouts differ")
    h = state.hyper
    g = grads.values
    m = h.beta1 * state.m + (1.0 - h.beta1) * g
    v = h.beta2 * state.v + (1.0 - h.beta2) * g * g
    t = state.step + 1
    mhat = m / (1.0 - h.beta1 ** t)
    vhat = v / (1.0 - h.beta2 ** t)
    delta = h.lr * mhat / (np.sqrt(vhat) + h.eps)
    if mask is not None:
        m = np.where(mask, m, state.m)
        v = np.where(mask, v, state.v)
        delta = np.where(mask, delta, 0.0)
    return params.with_values(params.values + delta), replace(state, m=m, v=v, step=t)


def clip_gradients(grads: GradVector, max_norm=DEFAULT_CLIP_NORM) -> GradVector:
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = float(np.linalg.norm(grads.values))
    if norm <= max_norm:
        return grads
    return grads.with_values(grads.values * (max_norm / norm))
