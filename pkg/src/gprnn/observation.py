"""Observation likelihoods and the Poisson joint log probability."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .diffcore import Node, ops
from .dynamics import latent_log_prior
from .gpmap import gp_log_prior_f

LOG2PI = np.log(2.0 * np.pi)


@dataclass
class ObservationMatrix:
    values: np.ndarray      # (N, T)
    kind: str = "real"      # "real" | "counts"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        validate_observations(self.values, self.kind)


def validate_observations(x, kind):
    x = np.asarray(x, dtype=np.float64)
    if kind == "counts":
        if np.any(x < 0) or np.any(x != np.round(x)) or not np.all(np.isfinite(x)):
            raise ValueError("count observations must be non-negative integers")
    elif kind == "real":
        if not np.all(np.isfinite(x)):
            raise ValueError("real observations must be finite")
    else:
        raise ValueError(f"unknown observation kind {kind!r}")


def _arr(x):
    return x.values if isinstance(x, ObservationMatrix) else np.asarray(x, dtype=np.float64)


def gaussian_loglik(x, F, l):
    """sum_{i,t} log N(x_it; F_it, l)."""
    if np.any((l.value if isinstance(l, Node) else np.asarray(l)) <= 0):
        raise ValueError("observation noise variance must be positive")
    x = _arr(x)
    r = ops.sub(x, F)
    n = x.size
    return -0.5 * (ops.sum(ops.square(r)) / l + n * ops.log(l) + n * LOG2PI)


def log_factorial(x):
    return gammaln(np.asarray(x, dtype=np.float64) + 1.0)


def poisson_loglik(x, F):
    """sum_{i,t} [x_it F_it - exp(F_it) - log x_it!] with rate exp(F)."""
    x = _arr(x)
    if np.any(x < 0):
        raise ValueError("negative spike count")
    return ops.sum(ops.mul(x, F) - ops.exp_clamped(F)) - float(np.sum(log_factorial(x)))


def joint_log_prob_poisson(x, F, z, rnn, hyper, prior=None):
    """Poisson likelihood + GP prior over tuning rows + latent prior.

    ``prior`` optionally replaces the RNN latent prior with any callable of
    ``z`` (used by the AR(1) ablation).
    """
    log_prior = prior(z) if prior is not None else latent_log_prior(rnn, z)
    return poisson_loglik(x, F) + gp_log_prior_f(F, z, hyper) + log_prior
