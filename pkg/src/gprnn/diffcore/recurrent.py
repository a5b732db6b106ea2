"""Whole-sequence LSTM/GRU primitives with backpropagation through time.

Gate layout for the LSTM is ``[input, forget, output, candidate]`` along the
last axis of ``W`` (D, 4H), ``U`` (H, 4H) and ``b`` (4H,).  The GRU uses
``[update, reset, candidate]`` with ``n = tanh(x Wn + r * (h Un) + bn)``.
Sequences are (B, T, D) arrays.  Initial hidden/cell states default to zero
and are treated as constants when given.
"""
from __future__ import annotations

import numpy as np

from .ops import _sigmoid
from .tape import Node, lift


def lstm_cell(x, h, c, W, U, b):
    """One LSTM step on plain arrays; returns (h, c)."""
    H = h.shape[-1]
    a = x @ W + h @ U + b
    i = _sigmoid(a[..., :H])
    f = _sigmoid(a[..., H:2 * H])
    o = _sigmoid(a[..., 2 * H:3 * H])
    g = np.tanh(a[..., 3 * H:])
    c = f * c + i * g
    return o * np.tanh(c), c


def gru_cell(x, h, W, U, b):
    H = h.shape[-1]
    ax = x @ W + b
    ah = h @ U
    z = _sigmoid(ax[..., :H] + ah[..., :H])
    r = _sigmoid(ax[..., H:2 * H] + ah[..., H:2 * H])
    n = np.tanh(ax[..., 2 * H:] + r * ah[..., 2 * H:])
    return (1.0 - z) * n + z * h


def lstm_sequence(X, W, U, b, h0=None, c0=None):
    X, W, U, b = lift(X), lift(W), lift(U), lift(b)
    x, Wv, Uv, bv = X.value, W.value, U.value, b.value
    B, T, _ = x.shape
    H = Uv.shape[0]
    XW = x @ Wv + bv
    gates = np.empty((B, T, 4 * H))
    cs = np.empty((B, T, H))
    tcs = np.empty((B, T, H))
    hs = np.empty((B, T, H))
    h = np.zeros((B, H)) if h0 is None else np.broadcast_to(h0, (B, H)).copy()
    c = np.zeros((B, H)) if c0 is None else np.broadcast_to(c0, (B, H)).copy()
    h_init, c_init = h, c
    # sigmoid(a) = 0.5 + 0.5 tanh(a / 2): one tanh covers all four gates
    scale = np.full(4 * H, 0.5)
    scale[3 * H:] = 1.0
    shift = np.full(4 * H, 0.5)
    shift[3 * H:] = 0.0
    XW *= scale
    Us = Uv * scale
    for t in range(T):
        gt = gates[:, t]
        np.tanh(XW[:, t] + h @ Us, out=gt)
        gt *= scale
        gt += shift
        c = gt[:, H:2 * H] * c + gt[:, :H] * gt[:, 3 * H:]
        tc = np.tanh(c)
        h = gt[:, 2 * H:3 * H] * tc
        cs[:, t], tcs[:, t], hs[:, t] = c, tc, h

    def vjp(G):
        # local gate derivatives, precomputed over the whole sequence; only the
        # recurrence through (dh, dc) stays in the loop
        i, f, o, g = (gates[..., k * H:(k + 1) * H] for k in range(4))
        c_prev = np.concatenate([c_init[:, None], cs[:, :-1]], axis=1)
        dc_dh = o * (1.0 - tcs * tcs)
        Pc = np.zeros((B, T, 4, H))
        Pc[:, :, 0] = g * i * (1.0 - i)
        Pc[:, :, 1] = c_prev * f * (1.0 - f)
        Pc[:, :, 3] = i * (1.0 - g * g)
        Po = tcs * o * (1.0 - o)
        dA = np.empty((B, T, 4, H))
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        UT = Uv.T
        for t in range(T - 1, -1, -1):
            dh = G[:, t] + dh_next
            dc = dh * dc_dh[:, t] + dc_next
            da = dA[:, t]
            np.multiply(dc[:, None, :], Pc[:, t], out=da)
            da[:, 2] = dh * Po[:, t]
            dc_next = dc * f[:, t]
            dh_next = da.reshape(B, 4 * H) @ UT
        dA = dA.reshape(B, T, 4 * H)
        h_prev = np.concatenate([h_init[:, None], hs[:, :-1]], axis=1)
        dAf = dA.reshape(-1, 4 * H)
        gU = h_prev.reshape(-1, H).T @ dAf if U.requires_grad else None
        gW = x.reshape(-1, x.shape[-1]).T @ dAf if W.requires_grad else None
        gb = dAf.sum(axis=0) if b.requires_grad else None
        gX = dA @ Wv.T if X.requires_grad else None
        return gX, gW, gU, gb

    return Node(hs, (X, W, U, b), vjp, "lstm_sequence")


def gru_sequence(X, W, U, b, h0=None):
    X, W, U, b = lift(X), lift(W), lift(U), lift(b)
    x, Wv, Uv, bv = X.value, W.value, U.value, b.value
    B, T, _ = x.shape
    H = Uv.shape[0]
    AX = x @ Wv + bv
    zs = np.empty((B, T, H))
    rs = np.empty((B, T, H))
    ns = np.empty((B, T, H))
    ahn = np.empty((B, T, H))
    hs = np.empty((B, T, H))
    h = np.zeros((B, H)) if h0 is None else np.broadcast_to(h0, (B, H)).copy()
    h_init = h
    for t in range(T):
        ah = h @ Uv
        z = _sigmoid(AX[:, t, :H] + ah[:, :H])
        r = _sigmoid(AX[:, t, H:2 * H] + ah[:, H:2 * H])
        n = np.tanh(AX[:, t, 2 * H:] + r * ah[:, 2 * H:])
        h = (1.0 - z) * n + z * h
        zs[:, t], rs[:, t], ns[:, t], ahn[:, t], hs[:, t] = z, r, n, ah[:, 2 * H:], h

    def vjp(G):
        dAX = np.empty((B, T, 3 * H))
        dAH = np.empty((B, T, 3 * H))
        dh_next = np.zeros((B, H))
        UT = Uv.T
        for t in range(T - 1, -1, -1):
            z, r, n = zs[:, t], rs[:, t], ns[:, t]
            h_prev = hs[:, t - 1] if t > 0 else h_init
            dh = G[:, t] + dh_next
            dn = dh * (1.0 - z) * (1.0 - n * n)
            dz = dh * (h_prev - n) * z * (1.0 - z)
            dr = dn * ahn[:, t] * r * (1.0 - r)
            dax = dAX[:, t]
            dax[:, :H], dax[:, H:2 * H], dax[:, 2 * H:] = dz, dr, dn
            dah = dAH[:, t]
            dah[:, :H], dah[:, H:2 * H], dah[:, 2 * H:] = dz, dr, dn * r
            dh_next = dh * z + dah @ UT
        h_prev = np.concatenate([h_init[:, None], hs[:, :-1]], axis=1)
        gU = h_prev.reshape(-1, H).T @ dAH.reshape(-1, 3 * H) if U.requires_grad else None
        dAXf = dAX.reshape(-1, 3 * H)
        gW = x.reshape(-1, x.shape[-1]).T @ dAXf if W.requires_grad else None
        gb = dAXf.sum(axis=0) if b.requires_grad else None
        gX = dAX @ Wv.T if X.requires_grad else None
        return gX, gW, gU, gb

    return Node(hs, (X, W, U, b), vjp, "gru_sequence")
