"""Fused Gaussian-process primitives with hand-derived adjoints."""
from __future__ import annotations

import numpy as np
from scipy.linalg import cho_solve
from scipy.linalg.lapack import dpotri

from .ops import LOG2PI
from .tape import Node, lift

MAX_JITTER_RETRIES = 3


class GramConditioningError(np.linalg.LinAlgError):
    pass


def cho_inverse(Lc):
    """K^{-1} from the lower Cholesky factor of K."""
    inv, info = dpotri(Lc, lower=1)
    if info != 0:
        raise np.linalg.LinAlgError(f"dpotri failed with info={info}")
    return np.tril(inv) + np.tril(inv, -1).T


def cholesky_jittered(K, base_jitter):
    """Lower Cholesky factor of ``K``, escalating diagonal jitter x10 up to 3 times.

    Returns ``(L, extra)`` where ``extra`` is the jitter added on top of ``K``.
    """
    extra = 0.0
    eye = np.eye(K.shape[-1])
    for attempt in range(MAX_JITTER_RETRIES + 1):
        try:
            return np.linalg.cholesky(K + extra * eye), extra
        except np.linalg.LinAlgError:
            extra = base_jitter * 10.0 ** (attempt + 1)
    raise GramConditioningError(
        f"Gram matrix of size {K.shape[-1]} is not positive definite after "
        f"{MAX_JITTER_RETRIES} jitter escalations (last jitter {extra / 10:.3g}); "
        "latent points are likely duplicated or the length scale is degenerate")


def mvn_logpdf(Y, K, base_jitter=1e-8):
    """Sum over columns of ``Y`` of log N(y; 0, K); leading batch axes allowed.

    ``Y`` has shape (..., n, m) and ``K`` (..., n, n).  Solves go through a
    Cholesky factor; no explicit inverse enters the value.
    """
    Y, K = lift(Y), lift(K)
    Yv, Kv = Y.value, K.value
    batch = Kv.shape[:-2]
    n, m = Yv.shape[-2], Yv.shape[-1]
    Kf = Kv.reshape((-1, n, n))
    Yf = np.broadcast_to(Yv, batch + (n, m)).reshape((-1, n, m))
    total = 0.0
    facs, alphas = [], []
    for Kb, Yb in zip(Kf, Yf):
        Lb, _ = cholesky_jittered(Kb, base_jitter)
        A = cho_solve((Lb, True), Yb)
        total += (-0.5 * np.sum(Yb * A) - m * np.sum(np.log(np.diag(Lb)))
                  - 0.5 * n * m * LOG2PI)
        facs.append(Lb)
        alphas.append(A)

    def vjp(g):
        gK = gY = None
        if K.requires_grad:
            gK = np.empty_like(Kf)
            for b, (Lb, A) in enumerate(zip(facs, alphas)):
                gK[b] = 0.5 * g * (A @ A.T - m * cho_inverse(Lb))
            gK = gK.reshape(Kv.shape)
        if Y.requires_grad:
            gY = -g * np.stack(alphas).reshape(batch + (n, m))
            if gY.shape != Yv.shape:
                gY = gY.reshape((-1,) + Yv.shape).sum(axis=0)
        return gY, gK

    return Node(total, (Y, K), vjp, "mvn_logpdf")


def mvn_logpdf_factored(Y, Lc):
    """``mvn_logpdf`` for a fixed covariance given by its lower Cholesky factor.

    ``Y`` is (n, m); only ``Y`` is differentiable.  Used when many steps share
    one covariance, so the factorization is paid once.
    """
    Y = lift(Y)
    n, m = Y.value.shape
    A = cho_solve((Lc, True), Y.value)
    total = (-0.5 * np.sum(Y.value * A) - m * np.sum(np.log(np.diag(Lc)))
             - 0.5 * n * m * LOG2PI)
    return Node(total, (Y,), lambda g: (-g * A,), "mvn_logpdf_factored")


def rbf_cross(Z1, Z2, rho, sigma):
    """rho * exp(-|z1 - z2|^2 / (2 sigma^2)) for all row pairs; shape (..., n, m)."""
    Z1, Z2, rho, sigma = lift(Z1), lift(Z2), lift(rho), lift(sigma)
    z1, z2 = Z1.value, Z2.value
    r, s = float(rho.value), float(sigma.value)
    D = z1[..., :, None, :] - z2[..., None, :, :]
    sq = np.sum(D * D, axis=-1)
    E = np.exp(-sq / (2.0 * s * s))
    K = r * E

    def vjp(g):
        GK = g * K
        grho = np.sum(g * E).reshape(rho.shape)
        gsig = np.sum(GK * sq).reshape(sigma.shape) / s ** 3
        g1 = g2 = None
        if Z1.requires_grad:
            g1 = -(GK.sum(-1)[..., None] * z1 - GK @ z2) / (s * s)
            if g1.shape != z1.shape:
                g1 = g1.reshape((-1,) + z1.shape).sum(axis=0)
        if Z2.requires_grad:
            g2 = (np.swapaxes(GK, -1, -2) @ z1 - GK.sum(-2)[..., None] * z2) / (s * s)
            if g2.shape != z2.shape:
                g2 = g2.reshape((-1,) + z2.shape).sum(axis=0)
        return g1, g2, grho, gsig

    return Node(K, (Z1, Z2, rho, sigma), vjp, "rbf_cross")


def rbf_predict(Zs, Ztr, alpha, rho, sigma):
    """Predictive mean ``k(Zs, Ztr) @ alpha`` with gradient w.r.t. ``Zs`` only.

    ``Zs`` is (..., M, L), ``Ztr`` (n, L), ``alpha`` (n, N); the (..., M, n)
    cross-kernel is formed once by the expanded square distance.
    """
    Zs = lift(Zs)
    zs = Zs.value
    ztr = np.asarray(Ztr, dtype=np.float64)
    s2 = float(sigma) ** 2
    sq = (np.sum(zs * zs, -1)[..., None] + np.sum(ztr * ztr, -1) - 2.0 * zs @ ztr.T)
    K = float(rho) * np.exp(-np.maximum(sq, 0.0) / (2.0 * s2))
    out = K @ alpha

    def vjp(g):
        GK = (g @ alpha.T) * K
        return ((GK @ ztr - GK.sum(-1)[..., None] * zs) / s2,)

    return Node(out, (Zs,), vjp, "rbf_predict")
