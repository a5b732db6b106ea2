"""Latent inference on new data with frozen model parameters.

Two uses: latents for a held-out forecast window (Gaussian model), and
leave-one-neuron-out co-smoothing (Poisson or Gaussian model).  In both, the
tuning curves are the GP predictive means conditioned on the training
latents (or the trained NN mapping), and only the new latents are optimized,
by Adam ascent of likelihood plus latent prior.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve

from ..diffcore import AdamState, ParamVector, adam_step, clip_gradients, cholesky_jittered, ops, rbf_cross, rbf_predict, value_and_grad
from ..diffcore.tape import Node
from ..gpmap import NnMapParams, nn_map_tm
from .elbo import to_time_major
from .model import ModelSpec, log_prior_tm
from .poisson import INIT_WIDTH, SMOOTH_WIDTH, counts_tm, init_f, smooth_counts


@dataclass
class GpReadout:
    """Frozen GP conditional: predictive mean k(z*, Z) alpha."""

    z_train: np.ndarray     # (n, L)
    alpha: np.ndarray       # (n, N)
    rho: float
    sigma: float

    @classmethod
    def fit(cls, z_train, targets, rho, sigma, noise=0.0, jitter=1e-6):
        z_train = np.asarray(z_train, dtype=np.float64)
        K = rbf_cross(z_train, z_train, rho, sigma).value
        K = K + (jitter * rho + noise) * np.eye(len(K))
        Lc, _ = cholesky_jittered(K, jitter * rho)
        return cls(z_train, cho_solve((Lc, True), targets), float(rho), float(sigma))

    def mean(self, z_tm):
        return rbf_predict(z_tm, self.z_train, self.alpha, self.rho, self.sigma)


def _adam_latents(objective, z0, steps, lr, clip=50.0):
    point = ParamVector.from_segments({"z": z0})
    state = AdamState.zeros(point, lr=lr)
    for _ in range(steps):
        _, g = value_and_grad(objective, point)
        point, state = adam_step(point, clip_gradients(g, clip), state)
    return np.array(point.get("z"))


def _seg(model):
    return {k: np.asarray(v) for k, v in model.segments().items()}


# ----------------------------------------------------------------------------
# Gaussian model: held-out window after the training window

def heldout_latents(model, family, x_train, x_test, steps=300, lr=0.02):
    """Latents (L, M) for observations ``x_test`` (N, M) that follow ``x_train`` (N, T).

    The training-window latents are the encoder means on ``x_train``; the
    test latents start from the encoder run over the joined sequence and are
    refined by maximizing the test likelihood plus the latent prior of the
    joined path (training part held fixed).
    """
    from .families import variational_encode
    spec: ModelSpec = model.spec
    seg = _seg(model)
    mean = model.x_mean[:, None]
    xtr, xte = np.asarray(x_train) - mean, np.asarray(x_test) - mean
    T, M = xtr.shape[1], xte.shape[1]
    if spec.family == "MF":
        z_train = np.asarray(family.phi["mu"])[0]                 # (T, L)
        z0 = np.repeat(z_train[-1:], M, axis=0)
    else:
        z_all = variational_encode(family, np.concatenate([xtr, xte], axis=1)).mu.T
        z_train = variational_encode(family, xtr).mu.T
        z0 = z_all[T:]
    l = float(np.exp(seg["obs.log_l"]))
    if spec.mapping == "gp":
        readout = GpReadout.fit(z_train, xtr.T, np.exp(seg["gp.log_rho"]),
                                np.exp(seg["gp.log_sigma"]), noise=l, jitter=spec.jitter)
        mapping = readout.mean
    else:
        nn = NnMapParams.from_segments(seg, "map")
        mapping = lambda z: nn_map_tm(nn, z)  # noqa: E731
    x_tm = xte.T[None]
    ztr = z_train[None]

    def objective(p):
        z = p["z"]
        zz = ops.reshape(z, (1, M, spec.L))
        r = ops.sub(x_tm, mapping(zz))
        lik = ops.sum(ops.square(r)) * (-0.5 / l)
        return lik + log_prior_tm(seg, spec, ops.concat([ztr, zz], axis=1))

    return _adam_latents(objective, z0, steps, lr).T


# ----------------------------------------------------------------------------
# co-smoothing

def _regression_init(F_train, z_train, F_test, keep):
    """Least-squares map from log-rates of the kept neurons to latents."""
    D = np.hstack([F_train[:, keep], np.ones((len(F_train), 1))])
    W = np.linalg.lstsq(D, z_train, rcond=None)[0]
    return np.hstack([F_test[:, keep], np.ones((len(F_test), 1))]) @ W


def cosmooth_predict(fit, x_test, neurons=None, steps=300, lr=0.05, chunk=10,
                     width=INIT_WIDTH):
    """Predicted rates for each left-out neuron.

    ``fit`` is a :class:`~gprnn.inference.poisson.PoissonFit`; ``x_test`` are
    counts (N, T) or (B, N, T).  For each neuron j in ``neurons`` the test
    latents are inferred from the other N-1 neurons and the rate of j is
    exp of its GP predictive mean.  Returns ``{j: rates (B, T)}``.
    """
    spec: ModelSpec = fit.model.spec
    seg = _seg(fit.model)
    x_tm = counts_tm(x_test)
    B, T, N = x_tm.shape
    neurons = list(range(N)) if neurons is None else [int(j) for j in neurons]
    for j in neurons:
        if not 0 <= j < N:
            raise IndexError(f"neuron {j} out of range for {N} neurons")
    z_train = np.asarray(fit.z)
    z_train = (z_train[None] if z_train.ndim == 2 else z_train).swapaxes(1, 2).reshape(-1, spec.L)
    F_train = np.asarray(fit.F).T                                     # (n, N)
    hyper = fit.hyper()
    readout = GpReadout.fit(z_train, F_train, hyper.rho, hyper.sigma, jitter=spec.jitter)
    F_test = np.swapaxes(init_f(np.swapaxes(x_tm, 1, 2), width), 1, 2).reshape(B * T, N)
    out = {}
    for start in range(0, len(neurons), chunk):
        group = neurons[start:start + chunk]
        J = len(group)
        mask = np.ones((J, 1, 1, N))
        z0 = np.empty((J, B, T, spec.L))
        for a, j in enumerate(group):
            mask[a, ..., j] = 0.0
            keep = np.arange(N) != j
            z0[a] = _regression_init(F_train, z_train, F_test, keep).reshape(B, T, spec.L)
        xm = x_tm[None] * mask

        def objective(p):
            z = p["z"]
            mu = readout.mean(z)                                    # (J, B, T, N)
            lik = ops.sum(ops.mul(mask, ops.mul(xm, mu) - ops.exp_clamped(mu)))
            return lik + log_prior_tm(seg, spec, ops.reshape(z, (J * B, T, spec.L)))

        z = _adam_latents(objective, z0, steps, lr)
        mu = readout.mean(z).value
        for a, j in enumerate(group):
            out[j] = np.exp(np.minimum(mu[a, ..., j], 30.0))
    return out


def poisson_latents(fit, x_test, steps=300, lr=0.05, width=INIT_WIDTH):
    """MAP latents (B, L, T) of new count trials under the frozen fit."""
    spec: ModelSpec = fit.model.spec
    seg = _seg(fit.model)
    x_tm = counts_tm(x_test)
    B, T, N = x_tm.shape
    z_train = np.asarray(fit.z)
    z_train = (z_train[None] if z_train.ndim == 2 else z_train).swapaxes(1, 2).reshape(-1, spec.L)
    F_train = np.asarray(fit.F).T
    hyper = fit.hyper()
    readout = GpReadout.fit(z_train, F_train, hyper.rho, hyper.sigma, jitter=spec.jitter)
    F_test = np.swapaxes(init_f(np.swapaxes(x_tm, 1, 2), width), 1, 2).reshape(B * T, N)
    z0 = _regression_init(F_train, z_train, F_test, np.ones(N, dtype=bool)).reshape(B, T, spec.L)

    def objective(p):
        mu = readout.mean(p["z"])
        return ops.sum(ops.mul(x_tm, mu) - ops.exp_clamped(mu)) + log_prior_tm(seg, spec, p["z"])

    return np.swapaxes(_adam_latents(objective, z0, steps, lr), 1, 2)


def cosmooth_predict_gaussian(model, family, x_train, x_test, neurons=None):
    """Left-out-neuron predictions for the Gaussian model with an amortized encoder.

    The encoder sees the test trials with neuron j's centered row set to zero;
    the prediction for j is the GP predictive mean (or NN map) at the encoded
    latents.  Returns ``{j: predictions (B, T)}``.
    """
    from .families import variational_encode
    spec: ModelSpec = model.spec
    if spec.family == "MF":
        raise ValueError("co-smoothing needs an amortized encoder; MF has none for new trials")
    seg = _seg(model)
    mean = model.x_mean
    xtr = np.asarray(x_train, dtype=np.float64)
    xtr = (xtr[None] if xtr.ndim == 2 else xtr) - mean[:, None]
    xte = np.asarray(x_test, dtype=np.float64)
    xte = (xte[None] if xte.ndim == 2 else xte) - mean[:, None]
    B, N, T = xte.shape
    neurons = list(range(N)) if neurons is None else [int(j) for j in neurons]
    for j in neurons:
        if not 0 <= j < N:
            raise IndexError(f"neuron {j} out of range for {N} neurons")
    z_train = variational_encode(family, xtr).mu
    z_train = (z_train[None] if z_train.ndim == 2 else z_train).swapaxes(1, 2).reshape(-1, spec.L)
    if spec.mapping == "gp":
        l = float(np.exp(seg["obs.log_l"]))
        readout = GpReadout.fit(z_train, xtr.swapaxes(1, 2).reshape(-1, N), np.exp(seg["gp.log_rho"]),
                                np.exp(seg["gp.log_sigma"]), noise=l, jitter=spec.jitter)
        mapping = lambda z: readout.mean(z).value  # noqa: E731
    else:
        nn = NnMapParams.from_segments(seg, "map")
        mapping = lambda z: nn_map_tm(nn, z).value  # noqa: E731
    out = {}
    for j in neurons:
        masked = xte.copy()
        masked[:, j] = 0.0
        z = variational_encode(family, masked).mu
        z = (z[None] if z.ndim == 2 else z).swapaxes(1, 2)          # (B, T, L)
        out[j] = mapping(z)[..., j] + mean[j]
    return out


def empirical_rate(x_test, width=SMOOTH_WIDTH):
    """Smoothed counts (B, T, N) used as the co-smoothing target."""
    return np.swapaxes(smooth_counts(np.swapaxes(counts_tm(x_test), 1, 2), width), 1, 2)


__all__ = [
    "GpReadout", "cosmooth_predict", "cosmooth_predict_gaussian", "empirical_rate",
    "heldout_latents", "poisson_latents",
]
