"""Latent priors: the stochastic-RNN prior and the AR(1) baseline.

Latent trajectories are arrays of shape (L, T), optionally with a leading
trial axis (B, L, T).  The RNN reads ``z_{t-1}`` (zero at t=1) and its hidden
state ``nu_t`` is mapped by a two-hidden-layer tanh network to the mean and
softplus variance of ``z_t``.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .diffcore import Node, gru_cell, gru_sequence, lstm_cell, lstm_sequence, ops
from .diffcore.ops import softplus_np

LOG2PI = np.log(2.0 * np.pi)
DEFAULT_HIDDEN = 30
FORGET_BIAS = 1.0


@dataclass
class MLPParams:
    """Two tanh hidden layers followed by a linear mean head and a softplus variance head."""

    W1: object
    b1: object
    W2: object
    b2: object
    Wmu: object
    bmu: object
    Wvar: object
    bvar: object

    def segments(self, prefix):
        return {f"{prefix}.{f.name}": getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_segments(cls, seg, prefix):
        return cls(**{f.name: seg[f"{prefix}.{f.name}"] for f in fields(cls)})


@dataclass
class RnnParams:
    W: object       # (L, G*H) input weights
    U: object       # (H, G*H) recurrent weights
    b: object       # (G*H,)
    head: MLPParams
    cell: str = "lstm"

    @property
    def hidden_size(self):
        return np.shape(_v(self.U))[0]

    @property
    def latent_dim(self):
        return np.shape(_v(self.W))[0]

    def segments(self, prefix="prior"):
        out = {f"{prefix}.W": self.W, f"{prefix}.U": self.U, f"{prefix}.b": self.b}
        out.update(self.head.segments(f"{prefix}.head"))
        return out

    @classmethod
    def from_segments(cls, seg, prefix="prior", cell="lstm"):
        return cls(seg[f"{prefix}.W"], seg[f"{prefix}.U"], seg[f"{prefix}.b"],
                   MLPParams.from_segments(seg, f"{prefix}.head"), cell)


@dataclass
class RnnState:
    hidden: np.ndarray
    cell: np.ndarray | None = None

    @classmethod
    def zeros(cls, H, cell="lstm"):
        return cls(np.zeros(H), np.zeros(H) if cell == "lstm" else None)


@dataclass
class Ar1Params:
    a: object           # (L,) autoregression coefficients
    q: object           # (L,) innovation variances
    mu0: object = 0.0
    q0: object = 1.0


def _v(x):
    return x.value if isinstance(x, Node) else np.asarray(x)


def _gates(cell):
    if cell == "lstm":
        return 4
    if cell == "gru":
        return 3
    raise ValueError(f"unknown RNN cell {cell!r}")


# ----------------------------------------------------------------------------
# initialisation

def orthogonal(n, rng):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def glorot(fan_in, fan_out, rng):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


def init_mlp(d_in, H, d_out, rng):
    return MLPParams(
        glorot(d_in, H, rng), np.zeros(H),
        glorot(H, H, rng), np.zeros(H),
        glorot(H, d_out, rng), np.zeros(d_out),
        glorot(H, d_out, rng), np.zeros(d_out),
    )


def init_recurrent(d_in, H, rng, cell="lstm"):
    """Fan-in uniform input weights, per-gate orthogonal recurrent blocks."""
    G = _gates(cell)
    lim = 1.0 / np.sqrt(d_in)
    W = rng.uniform(-lim, lim, size=(d_in, G * H))
    U = np.concatenate([orthogonal(H, rng) for _ in range(G)], axis=1)
    b = np.zeros(G * H)
    if cell == "lstm":
        b[H:2 * H] = FORGET_BIAS
    return W, U, b


def init_rnn_params(L, H=DEFAULT_HIDDEN, rng=None, cell="lstm"):
    rng = np.random.default_rng(rng)
    W, U, b = init_recurrent(L, H, rng, cell)
    return RnnParams(W, U, b, init_mlp(H, H, L, rng), cell)


def zero_rnn_params(L, H, cell="lstm"):
    G = _gates(cell)
    head = MLPParams(np.zeros((H, H)), np.zeros(H), np.zeros((H, H)), np.zeros(H),
                     np.zeros((H, L)), np.zeros(L), np.zeros((H, L)), np.zeros(L))
    return RnnParams(np.zeros((L, G * H)), np.zeros((H, G * H)), np.zeros(G * H), head, cell)


# ----------------------------------------------------------------------------
# RNN prior

def rnn_step(params: RnnParams, z_prev, state: RnnState) -> RnnState:
    W, U, b = _v(params.W), _v(params.U), _v(params.b)
    z_prev = np.asarray(z_prev, dtype=np.float64)
    if params.cell == "lstm":
        h, c = lstm_cell(z_prev, state.hidden, state.cell, W, U, b)
        return RnnState(h, c)
    return RnnState(gru_cell(z_prev, state.hidden, W, U, b))


def mlp_forward(head: MLPParams, V):
    """Apply the prior head to hidden states ``V`` (..., H); returns (mu, var) nodes."""
    a1 = ops.tanh(ops.add(ops.matmul(V, head.W1), head.b1))
    a2 = ops.tanh(ops.add(ops.matmul(a1, head.W2), head.b2))
    mu = ops.add(ops.matmul(a2, head.Wmu), head.bmu)
    var = ops.softplus(ops.add(ops.matmul(a2, head.Wvar), head.bvar))
    return mu, var


def prior_params(params: RnnParams, state):
    """Gaussian prior (mu_z, var_z) for the latent given the RNN hidden state."""
    hidden = state.hidden if isinstance(state, RnnState) else state
    V = np.atleast_2d(np.asarray(hidden, dtype=np.float64))
    mu, var = mlp_forward(params.head, V)
    shape = np.shape(hidden)[:-1] + (mu.shape[-1],)
    return mu.value.reshape(shape), var.value.reshape(shape)


def _time_major(z):
    """(L, T) or (B, L, T) -> (B, T, L) node."""
    z = z if isinstance(z, Node) else Node(np.asarray(z, dtype=np.float64))
    if z.ndim == 2:
        z = ops.reshape(z, (1,) + z.shape)
    return ops.swapaxes(z, 1, 2)


def hidden_states(params: RnnParams, z_tm, state0: RnnState | None = None):
    """Hidden states nu_1..nu_T for time-major latents (B, T, L)."""
    B, T, L = z_tm.shape
    inputs = ops.concat([np.zeros((B, 1, L)), z_tm[:, :T - 1]], axis=1)
    h0 = c0 = None
    if state0 is not None:
        h0, c0 = state0.hidden, state0.cell
    if params.cell == "lstm":
        return lstm_sequence(inputs, params.W, params.U, params.b, h0, c0)
    return gru_sequence(inputs, params.W, params.U, params.b, h0)


def prior_moments_tm(params: RnnParams, z_tm, state0=None):
    """Per-step prior means/variances (B, T, L) along a time-major trajectory."""
    return mlp_forward(params.head, hidden_states(params, z_tm, state0))


def latent_log_prior(params: RnnParams, z, z0_state: RnnState | None = None):
    """log p(z_1:T) = sum_t log N(z_t; mu(nu_t), diag var(nu_t)) as a scalar node.

    ``z0_state`` is the state before the first step (zero by default); the
    first input is always the zero latent.
    """
    z_tm = _time_major(z)
    mu, var = prior_moments_tm(params, z_tm, z0_state)
    return ops.gaussian_logpdf(z_tm, mu, var)


def sample_prior(params: RnnParams, T, seed=None, n_trials=None):
    """Ancestral samples, shape (L, T) or (n_trials, L, T)."""
    rng = np.random.default_rng(seed)
    L, H = params.latent_dim, params.hidden_size
    B = 1 if n_trials is None else n_trials
    out = np.empty((B, L, T))
    for bi in range(B):
        state = RnnState.zeros(H, params.cell)
        z = np.zeros(L)
        for t in range(T):
            state = rnn_step(params, z, state)
            mu, var = prior_params(params, state)
            z = mu + np.sqrt(var) * rng.standard_normal(L)
            out[bi, :, t] = z
    return out[0] if n_trials is None else out


def prior_mean_rollout(params: RnnParams, z_hist, steps):
    """Continue a trajectory by feeding back the prior mean.

    ``z_hist`` (L, T0) conditions the hidden state; returns (L, steps).
    """
    L, H = params.latent_dim, params.hidden_size
    state = RnnState.zeros(H, params.cell)
    z = np.zeros(L)
    for t in range(z_hist.shape[1]):
        state = rnn_step(params, z, state)
        z = z_hist[:, t]
    out = np.empty((L, steps))
    for t in range(steps):
        state = rnn_step(params, z, state)
        z, _ = prior_params(params, state)
        out[:, t] = z
    return out


# ----------------------------------------------------------------------------
# AR(1) baseline

def ar1_log_prior(params: Ar1Params, z):
    """sum_d [log N(z_d1; mu0, q0) + sum_{t>=2} log N(z_dt; a_d z_d,t-1, q_d)]."""
    z_tm = _time_major(z)
    a = params.a
    first = ops.gaussian_logpdf(z_tm[:, :1], params.mu0,
                                ops.mul(params.q0, np.ones(z_tm.shape[2])))
    if z_tm.shape[1] == 1:
        return first
    pred = ops.mul(z_tm[:, :-1], a)
    rest = ops.gaussian_logpdf(z_tm[:, 1:], pred, ops.mul(params.q, np.ones(z_tm.shape[2])))
    return first + rest


def init_ar1_params(L):
    return Ar1Params(a=np.full(L, 0.9), q=np.full(L, 0.1), mu0=np.zeros(L), q0=np.ones(L))


def softplus_inv(y):
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


__all__ = [
    "Ar1Params", "MLPParams", "RnnParams", "RnnState", "ar1_log_prior",
    "hidden_states", "init_ar1_params", "init_rnn_params", "latent_log_prior",
    "mlp_forward", "orthogonal", "prior_mean_rollout", "prior_moments_tm",
    "prior_params", "rnn_step", "sample_prior", "softplus_inv", "softplus_np",
    "zero_rnn_params",
]
