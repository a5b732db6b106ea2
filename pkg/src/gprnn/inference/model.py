"""Model variants as named parameter segments, and their log-densities.

A model is described by a :class:`ModelSpec` (dynamics, mapping, sizes) and a
dict of segments.  Segment prefixes:

``prior.``   RNN prior weights (theta) and head (psi)
``ar1.``     AR(1) baseline: ``a`` and ``log_q``
``gp.``      ``log_rho``, ``log_sigma``
``map.``     feed-forward mapping baseline
``obs.``     ``log_l`` (Gaussian observation variance)
``enc.``     variational family parameters (phi)

All internals are time-major: latents (B, T, L), observations (B, T, N).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..diffcore import mvn_logpdf, ops, rbf_cross
from ..dynamics import (
    Ar1Params, RnnParams, init_rnn_params, prior_moments_tm,
)
from ..gpmap import DEFAULT_JITTER, GpHyper, NnMapParams, init_nn_map, nn_map_tm
from .families import canonical_family, encode_tm, init_family

DYNAMICS = ("rnn", "ar1")
MAPPINGS = ("gp", "nn")


@dataclass(frozen=True)
class ModelSpec:
    L: int = 3
    H: int = 30
    dynamics: str = "rnn"
    mapping: str = "gp"
    family: str = "BI-LSTM"
    cell: str = "lstm"
    enc_hidden: int = 30
    jitter: float = DEFAULT_JITTER

    def __post_init__(self):
        if self.dynamics not in DYNAMICS:
            raise ValueError(f"dynamics must be one of {DYNAMICS}")
        if self.mapping not in MAPPINGS:
            raise ValueError(f"mapping must be one of {MAPPINGS}")
        object.__setattr__(self, "family", canonical_family(self.family))
        if self.L < 1 or self.H < 1:
            raise ValueError("sizes must be positive")


def split(seg, prefix):
    """Sub-dict of ``seg`` under ``prefix.`` with the prefix stripped."""
    p = prefix + "."
    return {k[len(p):]: v for k, v in seg.items() if k.startswith(p)}


def init_model_segments(spec: ModelSpec, N, rng, rho=1.0, sigma=1.0, l=1.0):
    out = {}
    if spec.dynamics == "rnn":
        out.update(init_rnn_params(spec.L, spec.H, rng, spec.cell).segments("prior"))
    else:
        out["ar1.a"] = np.full(spec.L, 0.9)
        out["ar1.log_q"] = np.full(spec.L, np.log(0.1))
    if spec.mapping == "gp":
        out["gp.log_rho"] = np.array(np.log(rho))
        out["gp.log_sigma"] = np.array(np.log(sigma))
    else:
        out.update(init_nn_map(spec.L, N, spec.H, rng).segments("map"))
    out["obs.log_l"] = np.array(np.log(l))
    return out


def init_encoder_segments(spec: ModelSpec, N, rng, T=None, B=1):
    fam = init_family(spec.family, spec.L, N, spec.enc_hidden, rng, T=T, B=B)
    return {f"enc.{k}": v for k, v in fam.phi.items()}


def hyper_of(seg, spec: ModelSpec):
    return GpHyper(ops.exp(seg["gp.log_rho"]), ops.exp(seg["gp.log_sigma"]), spec.jitter)


def rnn_of(seg, spec: ModelSpec):
    return RnnParams.from_segments(seg, "prior", spec.cell)


def ar1_of(seg):
    L = np.shape(getattr(seg["ar1.a"], "value", seg["ar1.a"]))[0]
    return Ar1Params(seg["ar1.a"], ops.exp(seg["ar1.log_q"]), np.zeros(L), np.ones(L))


def log_prior_tm(seg, spec: ModelSpec, z_tm):
    """Latent log prior summed over trials for time-major latents (B, T, L)."""
    if spec.dynamics == "rnn":
        mu, var = prior_moments_tm(rnn_of(seg, spec), z_tm)
        return ops.gaussian_logpdf(z_tm, mu, var)
    p = ar1_of(seg)
    first = ops.gaussian_logpdf(z_tm[:, :1], 0.0, 1.0)
    if z_tm.shape[1] == 1:
        return first
    q = ops.mul(p.q, np.ones(z_tm.shape[2]))
    return first + ops.gaussian_logpdf(z_tm[:, 1:], ops.mul(z_tm[:, :-1], p.a), q)


def gram_tm(z_tm, hyper: GpHyper):
    K = rbf_cross(z_tm, z_tm, hyper.rho, hyper.sigma)
    return ops.add(K, ops.mul(hyper.rho, hyper.jitter * np.eye(z_tm.shape[-2])))


def log_lik_tm(seg, spec: ModelSpec, x_tm, z_tm):
    """log p(x | z) with the GP tuning curves marginalized (or the NN map plugged in)."""
    l = ops.exp(seg["obs.log_l"])
    if spec.mapping == "gp":
        hyper = hyper_of(seg, spec)
        K = ops.add(gram_tm(z_tm, hyper), ops.mul(l, np.eye(z_tm.shape[1])))
        return mvn_logpdf(x_tm, K, hyper.abs_jitter)
    F = nn_map_tm(NnMapParams.from_segments(seg, "map"), z_tm)
    n = np.size(x_tm)
    r = ops.sub(x_tm, F)
    return -0.5 * (ops.sum(ops.square(r)) / l + n * ops.log(l) + n * np.log(2 * np.pi))


def log_joint_tm(seg, spec, x_tm, z_tm):
    return log_lik_tm(seg, spec, x_tm, z_tm) + log_prior_tm(seg, spec, z_tm)


def encode_segments(seg, spec: ModelSpec, x_tm):
    return encode_tm(spec.family, split(seg, "enc"), x_tm)


# L2 penalty on recurrent gate weights (prior and encoder LSTMs)
def gate_weight_names(names):
    out = []
    for n in names:
        base = n.rsplit(".", 1)[-1]
        if base in ("W", "U") and (n.startswith("prior.") or n.startswith("enc.")):
            out.append(n)
    return out


__all__ = [
    "DYNAMICS", "MAPPINGS", "ModelSpec", "encode_segments", "gate_weight_names",
    "gram_tm", "hyper_of", "init_encoder_segments", "init_model_segments",
    "log_joint_tm", "log_lik_tm", "log_prior_tm", "rnn_of", "split",
]
