"""Latent-recovery and predictive metrics.

Recovered latents are only identified up to an affine transform, so every
comparison with ground truth first fits ``truth ~ A est + b`` by least squares.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

RIDGE = 1e-8


@dataclass
class AlignmentMap:
    A: np.ndarray       # (L_true, L_est)
    b: np.ndarray       # (L_true,)
    ridge: bool = False

    def apply(self, est):
        return self.A @ np.asarray(est, dtype=np.float64) + self.b[:, None]


def _flat(z):
    """(L, T) or (B, L, T) -> (L, B*T)."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 3:
        z = np.concatenate(list(z), axis=1)
    if z.ndim != 2:
        raise ValueError("latents must be (L, T) or (B, L, T)")
    return z


def affine_align(est, truth):
    """Least-squares affine map from ``est`` to ``truth``; returns (map, aligned)."""
    E, Z = _flat(est), _flat(truth)
    if E.shape[1] != Z.shape[1]:
        raise ValueError("estimate and truth must have the same number of time points")
    D = np.vstack([E, np.ones((1, E.shape[1]))]).T           # (T, L_est + 1)
    ridge = np.linalg.matrix_rank(D) < D.shape[1]
    if ridge:
        G = D.T @ D + RIDGE * np.eye(D.shape[1])
        coef = np.linalg.solve(G, D.T @ Z.T)
    else:
        coef = np.linalg.lstsq(D, Z.T, rcond=None)[0]
    amap = AlignmentMap(coef[:-1].T, coef[-1], ridge)
    aligned = amap.apply(E)
    if np.ndim(truth) == 3:
        aligned = aligned.reshape(Z.shape[0], len(truth), -1).swapaxes(0, 1)
    return amap, aligned


def rmse_aligned(est, truth):
    _, aligned = affine_align(est, truth)
    return float(np.sqrt(np.mean((_flat(aligned) - _flat(truth)) ** 2)))


def r_squared(pred, truth):
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.size != truth.size or truth.size < 2:
        raise ValueError("need equal-length vectors of length >= 2")
    ss_tot = np.sum((truth - truth.mean()) ** 2)
    if ss_tot == 0:
        raise ValueError("R^2 undefined for constant truth")
    return float(1.0 - np.sum((truth - pred) ** 2) / ss_tot)


def per_dim_r2(est, truth):
    """R^2 of each true dimension after affine alignment."""
    _, aligned = affine_align(est, truth)
    A, Z = _flat(aligned), _flat(truth)
    return [r_squared(A[d], Z[d]) for d in range(Z.shape[0])]


def cosmooth_scores(fit, x_test, neurons=None, **kw):
    """Leave-one-neuron-out predictive R^2 for each neuron of ``x_test``.

    ``fit`` is a trained Poisson fit with frozen parameters; for each left-out
    neuron the test latents are inferred from the remaining neurons and the
    predicted rate is scored against that neuron's smoothed empirical rate.
    Neurons with a constant empirical rate are skipped.
    """
    from .inference.testtime import cosmooth_predict, empirical_rate
    target = empirical_rate(x_test)                            # (B, T, N)
    N = target.shape[-1]
    neurons = list(range(N)) if neurons is None else [int(j) for j in neurons]
    for j in neurons:
        if not 0 <= j < N:
            raise IndexError(f"neuron {j} out of range for {N} neurons")
    usable = [j for j in neurons if np.ptp(target[..., j]) > 0]
    pred = cosmooth_predict(fit, x_test, usable, **kw)
    return {j: r_squared(pred[j], target[..., j]) for j in usable}


def cosmooth_r2(fit, x_test, neuron, **kw):
    """Predictive R^2 of one left-out neuron (error if its empirical rate is constant)."""
    from .inference.testtime import cosmooth_predict, empirical_rate
    target = empirical_rate(x_test)[..., int(neuron)] if 0 <= int(neuron) < np.shape(x_test)[-2] else None
    if target is None:
        raise IndexError(f"neuron {neuron} out of range")
    pred = cosmooth_predict(fit, x_test, [neuron], **kw)[int(neuron)]
    return r_squared(pred, target)


def metric_record(metric, value, seed, config_hash, **extra):
    rec = {"metric": metric, "value": float(value), "seed": seed, "config_hash": config_hash}
    rec.update(extra)
    return rec


def dumps_record(rec):
    return json.dumps(rec, sort_keys=True)


__all__ = [
    "AlignmentMap", "affine_align", "cosmooth_r2", "cosmooth_scores", "dumps_record", "metric_record", "per_dim_r2",
    "r_squared", "rmse_aligned",
]
