"""Stochastic variational training of the Gaussian-observation model.

Each iteration: encode -> draw eps -> ELBO -> reverse-mode gradient for model
and encoder jointly -> L2 decay on gate weights -> clip -> Adam ascent.  The
returned parameters are those at the best exponentially smoothed ELBO.
"""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.ndimage import gaussian_filter1d

from ..diffcore import (
    AdamState, NonFiniteError, ParamVector, adam_step, clip_gradients, value_and_grad,
)
from .elbo import draw_eps, elbo_node, to_time_major
from .families import VariationalFamily, canonical_family
from .model import (
    ModelSpec, encode_segments, gate_weight_names, init_encoder_segments,
    init_model_segments, split,
)


@dataclass
class TrainConfig:
    L: int = 3
    H: int = 30
    dynamics: str = "rnn"
    mapping: str = "gp"
    family: str = "BI-LSTM"
    cell: str = "lstm"
    seed: int = 0
    lr: float = 1e-2
    max_iter: int = 20000
    tol: float = 1e-6
    patience: int = 50
    clip: float = 5.0
    samples: int = 1
    weight_decay: float = 1e-4
    ema: float = 0.95
    init: str = "pca"           # "pca" | "smooth" | "random"
    init_smooth: float = 2.0    # Gaussian sd (bins) for the "smooth" init
    pretrain_steps: int = 200
    center: bool = True
    log_path: str | None = None

    def __post_init__(self):
        self.family = canonical_family(self.family)
        if self.init not in ("pca", "smooth", "random"):
            raise ValueError("init must be 'pca', 'smooth' or 'random'")
        if self.samples < 1 or self.max_iter < 0 or self.lr < 0:
            raise ValueError("invalid optimizer settings")

    @property
    def spec(self):
        return ModelSpec(self.L, self.H, self.dynamics, self.mapping, self.family,
                         self.cell, enc_hidden=self.H)

    def as_dict(self):
        d = asdict(self)
        d.pop("log_path")
        return d

    def hash(self):
        return config_hash(self.as_dict())


def config_hash(d):
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class ModelParams:
    """Trained generative parameters plus the data centering they assume."""

    spec: ModelSpec
    params: ParamVector
    x_mean: np.ndarray

    def segments(self):
        return self.params.segments()


@dataclass
class TrainReport:
    iteration: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    elapsed: list = field(default_factory=list)
    best_iteration: int = -1
    best_objective: float = -np.inf
    converged: bool = False
    checkpoint: ParamVector | None = None
    config_hash: str = ""

    def records(self):
        for k in range(len(self.iteration)):
            yield {"iteration": self.iteration[k], "objective": self.objective[k],
                   "grad_norm": self.grad_norm[k], "elapsed": self.elapsed[k]}

    def fingerprint(self):
        """Digest of everything except wall-clock time."""
        h = hashlib.sha256()
        for arr in (self.iteration, self.objective, self.grad_norm):
            h.update(np.asarray(arr, dtype=np.float64).tobytes())
        h.update(repr((self.best_iteration, self.best_objective, self.converged)).encode())
        if self.checkpoint is not None:
            h.update(self.checkpoint.values.tobytes())
        return h.hexdigest()

    def same_as(self, other):
        return self.fingerprint() == other.fingerprint()

    def write_jsonl(self, path):
        with open(path, "w") as fh:
            for rec in self.records():
                fh.write(json.dumps(rec) + "\n")


@dataclass
class TrainState:
    """Everything needed to resume a run at iteration ``it``."""

    params: ParamVector
    adam: AdamState
    it: int = 0
    ema: float | None = None
    calm: int = 0
    best_ema: float = -np.inf
    best_iteration: int = -1
    best_params: ParamVector | None = None


class TrainingError(RuntimeError):
    pass


# ----------------------------------------------------------------------------
# initialisation

def pca_latents(x_tm, L):
    """Standardized top-L principal-component scores (B, T, L) and residual variance."""
    B, T, N = x_tm.shape
    X = x_tm.reshape(B * T, N)
    X = X - X.mean(axis=0)
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    k = min(L, len(s))
    scores = U[:, :k] * s[:k]
    if k < L:
        scores = np.concatenate([scores, np.zeros((B * T, L - k))], axis=1)
    sd = scores.std(axis=0)
    scores = scores / np.where(sd > 0, sd, 1.0)
    resid = float(np.sum(s[k:] ** 2) / (B * T * N))
    return scores.reshape(B, T, L), resid


def _pretrain_encoder(seg, spec, x_tm, target, steps, lr):
    """Regress the encoder mean onto ``target`` so training starts near it."""
    names = [k for k in seg if k.startswith("enc.")]
    point = ParamVector.from_segments({k: seg[k] for k in names})
    state = AdamState.zeros(point, lr=lr)

    def obj(p):
        mu, _ = encode_segments(p, spec, x_tm)
        r = mu - target
        return (r * r).sum() * (-0.5 / target.size)

    for _ in range(steps):
        _, g = value_and_grad(obj, point)
        point, state = adam_step(point, clip_gradients(g, 5.0), state)
    seg.update(point.segments())
    return seg


def init_segments(x_tm, cfg: TrainConfig):
    rng = np.random.default_rng(cfg.seed)
    spec = cfg.spec
    B, T, N = x_tm.shape
    v = float(np.mean(np.var(x_tm.reshape(B * T, N), axis=0)))
    z0, resid = pca_latents(x_tm, cfg.L)
    l0 = max(resid, 0.05 * v)
    seg = init_model_segments(spec, N, rng, rho=max(v - l0, 0.1 * v), sigma=1.0, l=l0)
    seg.update(init_encoder_segments(spec, N, rng, T=T, B=B))
    if cfg.init == "smooth":
        # temporally smoothed scores, a cheap GPFA-like starting point
        z0 = gaussian_filter1d(z0, cfg.init_smooth, axis=1, mode="nearest")
        z0 = (z0 - z0.mean(axis=(0, 1))) / z0.std(axis=(0, 1))
    if cfg.init in ("pca", "smooth"):
        if spec.family == "MF":
            seg["enc.mu"] = z0.copy()
        elif cfg.pretrain_steps > 0:
            seg = _pretrain_encoder(seg, spec, x_tm, z0, cfg.pretrain_steps, cfg.lr)
    return seg


# ----------------------------------------------------------------------------
# training loop

def _decay_mask(point, names):
    idx = np.zeros(len(point), dtype=bool)
    for n in names:
        s = point.layout[n]
        idx[s.offset:s.offset + s.size] = True
    return idx


def prepare(x, cfg: TrainConfig):
    x_tm = to_time_major(x)
    mean = x_tm.mean(axis=(0, 1)) if cfg.center else np.zeros(x_tm.shape[2])
    return x_tm - mean, mean


def initial_state(x, cfg: TrainConfig) -> TrainState:
    x_tm, _ = prepare(x, cfg)
    point = ParamVector.from_segments(init_segments(x_tm, cfg))
    return TrainState(point, AdamState.zeros(point, lr=cfg.lr))


def run(x, cfg: TrainConfig, state: TrainState | None = None, n_iter=None,
        report: TrainReport | None = None):
    """Advance training from ``state`` by up to ``n_iter`` iterations.

    Returns the new state and the (extended) report.  Iteration ``it`` draws
    its noise from ``default_rng([seed, it])`` so a resumed run continues
    exactly as an uninterrupted one would.
    """
    spec = cfg.spec
    x_tm, _ = prepare(x, cfg)
    B, T, _ = x_tm.shape
    state = state or initial_state(x, cfg)
    report = report or TrainReport(config_hash=cfg.hash())
    stop = cfg.max_iter if n_iter is None else min(cfg.max_iter, state.it + n_iter)
    decay = _decay_mask(state.params, gate_weight_names(state.params.names()))
    log = open(cfg.log_path, "a") if cfg.log_path else None
    t0 = time.perf_counter()
    point, adam = state.params, state.adam
    try:
        while state.it < stop and not report.converged:
            eps = draw_eps([cfg.seed, state.it], cfg.samples, B, T, cfg.L)
            try:
                val, g = value_and_grad(lambda p: elbo_node(p, spec, x_tm, eps), point)
            except (NonFiniteError, np.linalg.LinAlgError) as err:
                raise TrainingError(f"iteration {state.it}: {err}") from err
            if not np.isfinite(val):
                raise TrainingError(f"iteration {state.it}: non-finite ELBO {val}")
            if cfg.weight_decay:
                g = g.with_values(g.values - cfg.weight_decay * np.where(decay, point.values, 0.0))
            gnorm = g.norm()
            point, adam = adam_step(point, clip_gradients(g, cfg.clip), adam)

            ema = val if state.ema is None else cfg.ema * state.ema + (1 - cfg.ema) * val
            rel = abs(ema - state.ema) / max(abs(ema), 1e-12) if state.ema is not None else np.inf
            calm = state.calm + 1 if rel < cfg.tol else 0
            if ema > state.best_ema:
                # the parameters that produced this objective are the pre-step ones
                state = replace(state, best_ema=ema, best_iteration=state.it,
                                best_params=state.params)
            state = replace(state, params=point, adam=adam, it=state.it + 1, ema=ema, calm=calm)

            rec_t = time.perf_counter() - t0
            report.iteration.append(state.it - 1)
            report.objective.append(val)
            report.grad_norm.append(gnorm)
            report.elapsed.append(rec_t)
            if log:
                log.write(json.dumps({"iteration": state.it - 1, "objective": val,
                                      "grad_norm": gnorm, "elapsed": rec_t}) + "\n")
            if calm >= cfg.patience:
                report.converged = True
    finally:
        if log:
            log.close()
    report.best_iteration = state.best_iteration
    report.best_objective = float(state.best_ema)
    report.checkpoint = state.best_params if state.best_params is not None else state.params
    return state, report


def split_params(point: ParamVector, spec: ModelSpec, x_mean):
    seg = point.segments()
    model = ParamVector.from_segments({k: v for k, v in seg.items() if not k.startswith("enc.")})
    family = VariationalFamily(spec.family, {k: np.array(v) for k, v in split(seg, "enc").items()})
    return ModelParams(spec, model, np.asarray(x_mean)), family


def train_gaussian(x, config: TrainConfig | None = None, **overrides):
    """Fit model and variational parameters to real-valued observations.

    ``x`` is (N, T) or (B, N, T).  Returns ``(ModelParams, VariationalFamily,
    TrainReport)`` using the best-smoothed-ELBO parameters.
    """
    cfg = replace(config or TrainConfig(), **overrides)
    _, mean = prepare(x, cfg)
    state, report = run(x, cfg)
    model, family = split_params(report.checkpoint, cfg.spec, mean)
    return model, family, report


__all__ = [
    "ModelParams", "TrainConfig", "TrainReport", "TrainState", "TrainingError",
    "config_hash", "init_segments", "initial_state", "pca_latents", "prepare",
    "run", "split_params", "train_gaussian",
]
