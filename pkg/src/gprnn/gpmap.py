"""Gaussian-process tuning curves over latent space, plus the NN-mapping baseline.

Conventions: latents ``z`` are (L, T) (optionally (B, L, T)), tuning and
observation matrices are (N, T).  Log-densities are returned as scalar
:class:`~gprnn.diffcore.Node` objects so the same code serves evaluation and
training; use ``float()`` for the number.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve

from .diffcore import Node, cholesky_jittered, mvn_logpdf, ops, rbf_cross
from .diffcore.tape import lift

DEFAULT_JITTER = 1e-6


@dataclass
class GpHyper:
    """RBF hyperparameters; ``jitter`` is relative to ``rho``."""

    rho: object = 1.0
    sigma: object = 1.0
    jitter: float = DEFAULT_JITTER

    def __post_init__(self):
        if np.any(_val(self.rho) <= 0) or np.any(_val(self.sigma) <= 0) or self.jitter <= 0:
            raise ValueError("rho, sigma and jitter must be positive")

    @property
    def abs_jitter(self):
        return self.jitter * float(_val(self.rho))


def _val(x):
    return x.value if isinstance(x, Node) else np.asarray(x, dtype=np.float64)


def rbf_kernel(z, z2, hyper: GpHyper) -> float:
    d = np.asarray(z, dtype=np.float64) - np.asarray(z2, dtype=np.float64)
    return float(_val(hyper.rho)) * float(np.exp(-np.dot(d, d) / (2.0 * float(_val(hyper.sigma)) ** 2)))


def _tm(z):
    z = lift(z)
    if z.ndim == 2:
        z = ops.reshape(z, (1,) + z.shape)
    return ops.swapaxes(z, 1, 2)


def gram_node(z_tm, hyper: GpHyper):
    """Jittered Gram matrix (B, T, T) of time-major latents (B, T, L)."""
    K = rbf_cross(z_tm, z_tm, hyper.rho, hyper.sigma)
    # relative jitter scales with rho, so it stays on the tape
    return ops.add(K, ops.mul(hyper.rho, hyper.jitter * np.eye(z_tm.shape[1])))


def gram_matrix(z, hyper: GpHyper) -> np.ndarray:
    """K[s, t] = k(z_s, z_t) + jitter * [s == t]; verified factorizable."""
    z = np.asarray(z, dtype=np.float64)
    K = gram_node(_tm(z), hyper).value
    for Kb in K.reshape(-1, *K.shape[-2:]):
        cholesky_jittered(Kb, hyper.abs_jitter)
    return K[0] if z.ndim == 2 else K


def _rows_as_columns(F):
    """(N, T) or (B, N, T) -> (B, T, N)."""
    F = lift(F)
    if F.ndim == 1:
        F = ops.reshape(F, (1, 1, F.shape[0]))
    elif F.ndim == 2:
        F = ops.reshape(F, (1,) + F.shape)
    return ops.swapaxes(F, 1, 2)


def gp_log_prior_f(F, z, hyper: GpHyper):
    """sum_i log N(f_i; 0, K_z) for tuning rows ``F`` (T,), (N, T) or (B, N, T)."""
    K = gram_node(_tm(z), hyper)
    return mvn_logpdf(_rows_as_columns(F), K, hyper.abs_jitter)


def gp_log_marginal_gaussian(X, z, hyper: GpHyper, l):
    """sum_i log N(x_i; 0, K_z + l I), the GP-marginalized Gaussian likelihood."""
    if np.any(_val(l) <= 0):
        raise ValueError("observation noise variance must be positive")
    z_tm = _tm(z)
    K = gram_node(z_tm, hyper)
    K = ops.add(K, ops.mul(l, np.eye(z_tm.shape[1])))
    return mvn_logpdf(_rows_as_columns(X), K, hyper.abs_jitter)


@dataclass
class GpPredictor:
    """Cached conditional for predicting tuning values at new latent points.

    ``targets`` is (T, N): one column per neuron.  ``noise`` is the
    observation variance added to the training Gram diagonal (zero when the
    targets are noise-free tuning values).
    """

    z_train: np.ndarray       # (T, L)
    targets: np.ndarray       # (T, N)
    hyper: GpHyper
    noise: float = 0.0
    chol: np.ndarray = field(init=False, repr=False)
    alpha: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        rho, sigma = float(_val(self.hyper.rho)), float(_val(self.hyper.sigma))
        K = rbf_cross(self.z_train, self.z_train, rho, sigma).value
        K = K + (self.hyper.abs_jitter + self.noise) * np.eye(K.shape[0])
        self.chol, _ = cholesky_jittered(K, self.hyper.abs_jitter)
        self.alpha = cho_solve((self.chol, True), self.targets)

    def cross(self, z_star):
        rho, sigma = float(_val(self.hyper.rho)), float(_val(self.hyper.sigma))
        return rbf_cross(z_star, self.z_train, rho, sigma).value

    def mean_node(self, z_star_tm):
        """Differentiable predictive means (..., M, N) at latent rows (..., M, L)."""
        rho, sigma = float(_val(self.hyper.rho)), float(_val(self.hyper.sigma))
        Ks = rbf_cross(z_star_tm, self.z_train, rho, sigma)
        return ops.matmul(Ks, self.alpha)

    def predict(self, z_star):
        """Means (M, N) and variances (M,) at latent rows ``z_star`` (M, L)."""
        Ks = self.cross(z_star)
        mean = Ks @ self.alpha
        v = cho_solve((self.chol, True), Ks.T)
        var = float(_val(self.hyper.rho)) - np.sum(Ks * v.T, axis=1)
        return mean, np.maximum(var, 0.0)


def gp_posterior_predict(f_train, z_train, z_star, hyper: GpHyper, noise=0.0):
    """Predictive mean and variance of a tuning curve at ``z_star``.

    ``f_train`` is (T,) and ``z_train`` (L, T); ``z_star`` is (L,) for one
    query or (L, M) for several.  Returns floats or (M,) arrays.
    """
    z_star = np.asarray(z_star, dtype=np.float64)
    single = z_star.ndim == 1
    zs = z_star[None, :] if single else z_star.T
    pred = GpPredictor(np.asarray(z_train, dtype=np.float64).T,
                       np.asarray(f_train, dtype=np.float64).reshape(-1, 1), hyper, noise)
    mean, var = pred.predict(zs)
    mean = mean[:, 0]
    return (float(mean[0]), float(var[0])) if single else (mean, var)


# ----------------------------------------------------------------------------
# feed-forward mapping baseline

@dataclass
class NnMapParams:
    """Feed-forward map R^L -> R^N; tanh on every layer but the last."""

    weights: list
    biases: list

    def segments(self, prefix="map"):
        out = {}
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.W{k}"] = W
            out[f"{prefix}.b{k}"] = b
        return out

    @classmethod
    def from_segments(cls, seg, prefix="map"):
        Ws, bs, k = [], [], 0
        while f"{prefix}.W{k}" in seg:
            Ws.append(seg[f"{prefix}.W{k}"])
            bs.append(seg[f"{prefix}.b{k}"])
            k += 1
        return cls(Ws, bs)


def init_nn_map(L, N, H=30, rng=None, n_hidden=2):
    from .dynamics import glorot
    rng = np.random.default_rng(rng)
    dims = [L] + [H] * n_hidden + [N]
    Ws = [glorot(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]
    bs = [np.zeros(b) for b in dims[1:]]
    return NnMapParams(Ws, bs)


def nn_map_tm(params: NnMapParams, z_tm):
    h = z_tm
    last = len(params.weights) - 1
    for k, (W, b) in enumerate(zip(params.weights, params.biases)):
        h = ops.add(ops.matmul(h, W), b)
        if k < last:
            h = ops.tanh(h)
    return h


def nn_map_forward(params: NnMapParams, z) -> np.ndarray:
    """Tuning matrix (N, T) from latents (L, T), one column per time point."""
    z = np.asarray(z, dtype=np.float64)
    out = nn_map_tm(params, z.T).value
    return out.T


__all__ = [
    "GpHyper", "GpPredictor", "NnMapParams", "gp_log_marginal_gaussian",
    "gp_log_prior_f", "gp_posterior_predict", "gram_matrix", "gram_node",
    "init_nn_map", "nn_map_forward", "nn_map_tm", "rbf_kernel",
]
