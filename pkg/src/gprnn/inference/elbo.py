"""Evidence lower bound for the Gaussian-observation model.

    L = E_q[log p(x, z)] + H[q]

estimated with reparameterized samples z = mu + sqrt(var) * eps.  The entropy
is used in closed form unless ``single_sample`` is set, in which case the
sampled ``-log q(z)`` replaces it (the textbook S=1 estimator).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..diffcore import GradVector, ParamVector, backward, ops, variable
from ..diffcore.tape import Node
from ..dynamics import RnnParams
from ..gpmap import GpHyper, NnMapParams
from .families import VariationalFamily, gaussian_entropy
from .model import ModelSpec, encode_segments, log_joint_tm


@dataclass
class GaussianModel:
    """Generative parameters in natural units; converted to log-space segments on demand."""

    rnn: RnnParams | None
    hyper: GpHyper
    l: float = 1.0
    ar1: object = None
    nnmap: NnMapParams | None = None
    spec: ModelSpec = field(default_factory=ModelSpec)

    def segments(self):
        out = {}
        if self.spec.dynamics == "rnn":
            out.update(self.rnn.segments("prior"))
        else:
            out["ar1.a"] = np.asarray(self.ar1.a, dtype=float)
            out["ar1.log_q"] = np.log(np.asarray(self.ar1.q, dtype=float))
        if self.spec.mapping == "gp":
            out["gp.log_rho"] = np.array(np.log(float(self.hyper.rho)))
            out["gp.log_sigma"] = np.array(np.log(float(self.hyper.sigma)))
        else:
            out.update(self.nnmap.segments("map"))
        out["obs.log_l"] = np.array(np.log(self.l))
        return out


def to_time_major(x):
    """(N, T) or (B, N, T) -> (B, T, N) array."""
    x = np.asarray(getattr(x, "values", x), dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    return np.ascontiguousarray(np.swapaxes(x, 1, 2))


def elbo_node(seg, spec: ModelSpec, x_tm, eps, single_sample=False):
    """Differentiable ELBO estimate; ``eps`` is (S, B, T, L)."""
    mu, var = encode_segments(seg, spec, x_tm)
    S = eps.shape[0]
    sd = ops.sqrt(var)
    total = 0.0
    for s in range(S):
        z = ops.add(mu, ops.mul(sd, eps[s]))
        term = log_joint_tm(seg, spec, x_tm, z)
        if single_sample:
            term = term - ops.gaussian_logpdf(z, mu, var)
        total = term + total
    total = total * (1.0 / S)
    if not single_sample:
        total = total + gaussian_entropy(var)
    return total


def draw_eps(seed, S, B, T, L):
    return np.random.default_rng(seed).standard_normal((S, B, T, L))


def _segments(model, family):
    if isinstance(model, dict):
        seg = dict(model)
    else:
        seg = model.segments()
    seg.update({f"enc.{k}": v for k, v in family.phi.items()})
    return seg


def _spec(model, family, spec):
    spec = spec or model.spec
    return spec if spec.family == family.tag else replace(spec, family=family.tag)


def elbo_estimate(model, family: VariationalFamily, x, S=1, seed=None,
                  single_sample=False, spec=None):
    """Monte Carlo ELBO with ``S`` reparameterized samples.

    ``model`` is a :class:`GaussianModel` or a segment dict (then ``spec`` is
    required).  Observations ``x`` are (N, T) or (B, N, T).
    """
    if S < 1:
        raise ValueError("S must be >= 1")
    x_tm = to_time_major(x)
    seg = _segments(model, family)
    spec = _spec(model, family, spec)
    B, T, _ = x_tm.shape
    eps = draw_eps(seed, S, B, T, spec.L)
    return float(elbo_node(seg, spec, x_tm, eps, single_sample).value)


def _grad_of(fn, point: ParamVector):
    leaves = {n: variable(np.array(point.get(n)), n) for n in point.names()}
    out = fn(leaves)
    g = backward(out)
    flat = np.concatenate([np.reshape(g.get(leaves[n].id, np.zeros(point.layout[n].shape)), -1)
                           for n in point.names()])
    return float(out.value), GradVector(flat, point.layout)


def reparam_grad(model, family, x, S=1, seed=None, spec=None):
    """Pathwise (reparameterized) gradient estimate as a :class:`GradVector`."""
    x_tm = to_time_major(x)
    spec = _spec(model, family, spec)
    point = ParamVector.from_segments(_segments(model, family))
    B, T, _ = x_tm.shape
    eps = draw_eps(seed, S, B, T, spec.L)
    return _grad_of(lambda p: elbo_node(p, spec, x_tm, eps), point)[1]


def score_function_grad(model, family, x, S=1, seed=None, spec=None):
    """Score-function (REINFORCE) estimate of the ELBO gradient.

    For each sample z ~ q (held fixed), the surrogate
    ``log p(x, z) + [log p(x, z) - log q(z)]_stop * log q(z) - log q(z)``
    has gradient ``grad_Theta log p + (log p - log q) grad_phi log q``; the
    last term's expectation is zero but is kept so the estimator is the plain
    textbook form.  Provided for cross-checking the pathwise estimator.
    """
    x_tm = to_time_major(x)
    spec = _spec(model, family, spec)
    point = ParamVector.from_segments(_segments(model, family))
    B, T, _ = x_tm.shape
    eps = draw_eps(seed, S, B, T, spec.L)
    const = {n: Node(np.array(point.get(n))) for n in point.names()}
    mu0, var0 = encode_segments(const, spec, x_tm)
    zs = [mu0.value + np.sqrt(var0.value) * eps[s] for s in range(S)]
    weights = [float(log_joint_tm(const, spec, x_tm, z).value
                     - ops.gaussian_logpdf(z, mu0, var0).value) for z in zs]

    def surrogate(p):
        mu, var = encode_segments(p, spec, x_tm)
        total = 0.0
        for z, w in zip(zs, weights):
            logq = ops.gaussian_logpdf(z, mu, var)
            total = log_joint_tm(p, spec, x_tm, z) + (w - 1.0) * logq + total
        return total * (1.0 / S)

    return _grad_of(surrogate, point)[1]


__all__ = [
    "GaussianModel", "draw_eps", "elbo_estimate", "elbo_node", "reparam_grad",
    "score_function_grad", "to_time_major",
]
