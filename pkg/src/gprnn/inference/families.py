"""Variational families and inference networks.

Five structured Gaussian posteriors over the latent path:

========  ===================  ==========================================
tag       conditioning         parameters
========  ===================  ==========================================
MF        none (local)         per-time means and raw variances
VAE       x_t                  shared two-layer tanh encoder
L-LSTM    x_1..x_t             forward LSTM + linear/softplus heads
R-LSTM    x_t..x_T             backward LSTM + linear/softplus heads
BI-LSTM   x_1..x_T             both LSTMs, precision-weighted merge
========  ===================  ==========================================
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..diffcore import Node, lift, lstm_sequence, ops
from ..diffcore.ops import softplus_np
from ..dynamics import MLPParams, glorot, init_mlp, init_recurrent, mlp_forward, softplus_inv

FAMILIES = ("MF", "VAE", "L-LSTM", "R-LSTM", "BI-LSTM")
MF_INIT_VAR = 0.1


def canonical_family(tag):
    t = tag.upper().replace("_", "-")
    aliases = {"LLSTM": "L-LSTM", "RLSTM": "R-LSTM", "BILSTM": "BI-LSTM", "BI": "BI-LSTM"}
    t = aliases.get(t.replace("-", ""), t)
    if t not in FAMILIES:
        raise ValueError(f"unknown variational family {tag!r}; choose from {FAMILIES}")
    return t


@dataclass
class VariationalPosterior:
    mu: np.ndarray      # (L, T) or (B, L, T)
    var: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.var) <= 0):
            raise ValueError("posterior variances must be positive")


@dataclass
class VariationalFamily:
    """A family tag with its parameters ``phi`` as ``{name: array or Node}``.

    Segment names inside ``phi`` carry no prefix; training code stores them
    under ``enc.``.
    """

    tag: str
    phi: dict

    def __post_init__(self):
        self.tag = canonical_family(self.tag)

    def encode_tm(self, x_tm):
        """(mu, var) nodes of shape (B, T, L) from time-major inputs (B, T, D)."""
        return encode_tm(self.tag, self.phi, x_tm)


def _lstm_branch(phi, side, x_tm, reverse=False):
    if reverse:
        x_tm = ops.flip(x_tm, 1)
    h = lstm_sequence(x_tm, phi[f"{side}.W"], phi[f"{side}.U"], phi[f"{side}.b"])
    if reverse:
        h = ops.flip(h, 1)
    mu = ops.add(ops.matmul(h, phi[f"{side}.Wmu"]), phi[f"{side}.bmu"])
    var = ops.softplus(ops.add(ops.matmul(h, phi[f"{side}.Wvar"]), phi[f"{side}.bvar"]))
    return mu, var


def bilstm_combine(mu_l, var_l, mu_r, var_r):
    """Precision-weighted merge of the forward and backward posteriors."""
    s = ops.add(var_l, var_r)
    mu = ops.div(ops.add(ops.mul(mu_r, var_l), ops.mul(mu_l, var_r)), s)
    var = ops.div(ops.mul(var_l, var_r), s)
    if not any(isinstance(a, Node) for a in (mu_l, var_l, mu_r, var_r)):
        return mu.value, var.value
    return mu, var


def encode_tm(tag, phi, x_tm):
    x_tm = lift(x_tm)
    if tag == "MF":
        return lift(phi["mu"]), ops.softplus(phi["raw"])
    if tag == "VAE":
        return mlp_forward(MLPParams.from_segments(phi, "mlp"), x_tm)
    if tag == "L-LSTM":
        return _lstm_branch(phi, "l", x_tm)
    if tag == "R-LSTM":
        return _lstm_branch(phi, "r", x_tm, reverse=True)
    if tag == "BI-LSTM":
        mu_l, var_l = _lstm_branch(phi, "l", x_tm)
        mu_r, var_r = _lstm_branch(phi, "r", x_tm, reverse=True)
        return bilstm_combine(mu_l, var_l, mu_r, var_r)
    raise ValueError(tag)


def variational_encode(family: VariationalFamily, x) -> VariationalPosterior:
    """Posterior means/variances (L, T) for observations ``x`` (D, T) or (B, D, T)."""
    x = np.asarray(getattr(x, "values", x), dtype=np.float64)
    single = x.ndim == 2
    x_tm = np.swapaxes(x[None] if single else x, 1, 2)
    mu, var = family.encode_tm(x_tm)
    mu, var = np.swapaxes(mu.value, 1, 2), np.swapaxes(var.value, 1, 2)
    if single:
        mu, var = mu[0], var[0]
    return VariationalPosterior(mu, var)


def init_family(tag, L, D, H=30, rng=None, T=None, B=1):
    """Initial ``phi`` for a family; MF needs the trajectory length ``T``."""
    tag = canonical_family(tag)
    rng = np.random.default_rng(rng)
    phi = {}
    if tag == "MF":
        if T is None:
            raise ValueError("MF family needs the number of time points")
        phi["mu"] = 0.1 * rng.standard_normal((B, T, L))
        phi["raw"] = np.full((B, T, L), float(softplus_inv(MF_INIT_VAR)))
    elif tag == "VAE":
        phi.update(init_mlp(D, H, L, rng).segments("mlp"))
        phi["mlp.bvar"] = np.full(L, float(softplus_inv(MF_INIT_VAR)))
    else:
        sides = {"L-LSTM": "l", "R-LSTM": "r", "BI-LSTM": "lr"}[tag]
        for side in sides:
            W, U, b = init_recurrent(D, H, rng, "lstm")
            phi[f"{side}.W"], phi[f"{side}.U"], phi[f"{side}.b"] = W, U, b
            phi[f"{side}.Wmu"] = glorot(H, L, rng)
            phi[f"{side}.bmu"] = np.zeros(L)
            phi[f"{side}.Wvar"] = glorot(H, L, rng)
            phi[f"{side}.bvar"] = np.full(L, float(softplus_inv(MF_INIT_VAR)))
    return VariationalFamily(tag, phi)


def reparam_sample(post: VariationalPosterior, eps):
    """z = mu + sqrt(var) * eps with diagonal covariance."""
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != np.shape(post.mu):
        raise ValueError(f"eps shape {eps.shape} does not match posterior {np.shape(post.mu)}")
    return np.asarray(post.mu) + np.sqrt(post.var) * eps


def reparam_node(mu, var, eps):
    return ops.add(mu, ops.mul(ops.sqrt(var), eps))


def gaussian_entropy(post_or_var):
    """(n/2)(1 + log 2 pi) + 1/2 sum log var for a diagonal Gaussian of n cells."""
    var = post_or_var.var if isinstance(post_or_var, VariationalPosterior) else post_or_var
    if isinstance(var, Node):
        n = var.value.size
        return 0.5 * n * (1.0 + np.log(2.0 * np.pi)) + 0.5 * ops.sum(ops.log(var))
    var = np.asarray(var, dtype=np.float64)
    if np.any(var <= 0):
        raise ValueError("variances must be positive")
    return 0.5 * var.size * (1.0 + np.log(2.0 * np.pi)) + 0.5 * float(np.sum(np.log(var)))


def diag_log_q(z, mu, var):
    """log q(z) for a diagonal Gaussian, summed."""
    return ops.gaussian_logpdf(z, mu, var)


__all__ = [
    "FAMILIES", "VariationalFamily", "VariationalPosterior", "bilstm_combine",
    "canonical_family", "diag_log_q", "encode_tm", "gaussian_entropy", "init_family",
    "reparam_node", "reparam_sample", "softplus_np", "variational_encode",
]
