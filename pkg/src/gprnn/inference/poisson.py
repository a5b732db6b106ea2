"""MAP coordinate ascent for the Poisson-observation model.

The joint

    log p(x | F) + sum_i log N(f_i; 0, K_z) + log p(z)

is maximized block-wise: Adam steps on F with z fixed, then on (z, theta,
psi) with F fixed, and every few cycles on the GP hyperparameters.  Several
trials share one GP over their concatenated time points; the RNN prior runs
per trial.  A block that lowers the joint by more than the overshoot tolerance
is rolled back and retried later with half the learning rate, so the accepted
sequence of joints is monotone.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy.ndimage import convolve1d

from ..diffcore import (
    AdamState, NonFiniteError, ParamVector, adam_step, cholesky_jittered, clip_gradients, mvn_logpdf,
    mvn_logpdf_factored, ops, value_and_grad,
)
from ..dynamics import init_rnn_params, prior_moments_tm
from ..gpmap import GpHyper
from ..observation import log_factorial, validate_observations
from .model import ModelSpec, gram_tm, rnn_of
from .train import ModelParams, TrainReport, TrainingError, config_hash, pca_latents

EPS_RATE = 0.1
SMOOTH_WIDTH = 5.0      # full width at half maximum, in bins
INIT_WIDTH = 2.0        # narrower smoothing for the initial log-rates
NUGGET = 1e-2           # relative jitter of the Poisson GP prior; bounds latent collapse


def smoothing_kernel(width=SMOOTH_WIDTH):
    """Normalized Gaussian kernel with the given FWHM, truncated at 3 sd."""
    sd = width / (2.0 * np.sqrt(2.0 * np.log(2.0)))
    half = int(np.ceil(3.0 * sd))
    k = np.exp(-0.5 * (np.arange(-half, half + 1) / sd) ** 2)
    return k / k.sum()


def smooth_counts(x, width=SMOOTH_WIDTH):
    """Gaussian-smooth each row of ``x`` (..., T) along time, renormalizing at the edges."""
    x = np.asarray(x, dtype=np.float64)
    k = smoothing_kernel(width)
    ones = convolve1d(np.ones(x.shape[-1]), k, mode="constant")
    return convolve1d(x, k, axis=-1, mode="constant") / ones


def init_f(x, width=SMOOTH_WIDTH, eps=EPS_RATE):
    """Initial log-rates log(smoothed counts + eps), same shape as ``x``."""
    x = np.asarray(getattr(x, "values", x), dtype=np.float64)
    validate_observations(x, "counts")
    return np.log(smooth_counts(x, width) + eps)


@dataclass
class PoissonConfig:
    L: int = 3
    H: int = 30
    cell: str = "lstm"
    seed: int = 0
    lr: float = 1e-2
    max_cycles: int = 2000
    f_steps: int = 25
    z_steps: int = 25
    hyper_steps: int = 25
    hyper_every: int = 4
    tol: float = 1e-6
    patience: int = 5
    overshoot_tol: float = 1e-6
    clip: float = 5.0
    weight_decay: float = 1e-4
    smooth_width: float = INIT_WIDTH
    eps_rate: float = EPS_RATE
    jitter: float = NUGGET
    learn_sigma: bool = True

    @property
    def spec(self):
        return ModelSpec(self.L, self.H, "rnn", "gp", "MF", self.cell, jitter=self.jitter)

    def as_dict(self):
        return asdict(self)

    def hash(self):
        return config_hash(self.as_dict())


def counts_tm(x):
    """(N, T) or (B, N, T) counts -> (B, T, N)."""
    x = np.asarray(getattr(x, "values", x), dtype=np.float64)
    validate_observations(x, "counts")
    if x.ndim == 2:
        x = x[None]
    return np.ascontiguousarray(np.swapaxes(x, 1, 2))


def f_block_objective(point, spec, x_tm, const):
    """Joint as a function of F alone, with the Gram factor computed once.

    Agrees with :func:`poisson_joint_tm` in value up to the F-independent
    latent-prior term, and exactly in its F gradient.
    """
    B, T, N = x_tm.shape
    seg = point.segments()
    hyper = GpHyper(float(np.exp(seg["gp.log_rho"])), float(np.exp(seg["gp.log_sigma"])), spec.jitter)
    K = gram_tm(np.asarray(seg["z"]).reshape(1, B * T, spec.L), hyper).value[0]
    Lc, _ = cholesky_jittered(K, hyper.abs_jitter)
    xf = x_tm.reshape(B * T, N)

    def objective(p):
        F = p["F"]
        return ops.sum(ops.mul(xf, F) - ops.exp_clamped(F)) - const + mvn_logpdf_factored(F, Lc)

    return objective


def poisson_joint_tm(seg, spec, x_tm, const):
    """Joint log probability from segments ``F`` (B*T, N), ``z`` (B, T, L), prior.*, gp.*."""
    B, T, N = x_tm.shape
    F, z = seg["F"], seg["z"]
    hyper = GpHyper(ops.exp(seg["gp.log_rho"]), ops.exp(seg["gp.log_sigma"]), spec.jitter)
    zf = ops.reshape(z, (1, B * T, spec.L))
    K = gram_tm(zf, hyper)
    gp = mvn_logpdf(ops.reshape(F, (1, B * T, N)), K, hyper.abs_jitter)
    xf = x_tm.reshape(B * T, N)
    lik = ops.sum(ops.mul(xf, F) - ops.exp_clamped(F)) - const
    mu, var = prior_moments_tm(rnn_of(seg, spec), z)
    return lik + gp + ops.gaussian_logpdf(z, mu, var)


@dataclass
class PoissonFit:
    """Trained Poisson model: generative params plus MAP F and z."""

    model: ModelParams
    F: np.ndarray       # (N, B*T)
    z: np.ndarray       # (L, T) or (B, L, T)
    report: TrainReport

    def hyper(self):
        seg = self.model.segments()
        return GpHyper(float(np.exp(seg["gp.log_rho"])), float(np.exp(seg["gp.log_sigma"])),
                       self.model.spec.jitter)


def _init_point(x_tm, cfg: PoissonConfig):
    rng = np.random.default_rng(cfg.seed)
    B, T, N = x_tm.shape
    F0 = np.swapaxes(init_f(np.swapaxes(x_tm, 1, 2), cfg.smooth_width, cfg.eps_rate), 1, 2)
    F0 = F0.reshape(B * T, N)
    z0, _ = pca_latents(F0.reshape(B, T, N), cfg.L)
    seg = {"F": F0, "z": z0}
    seg.update(init_rnn_params(cfg.L, cfg.H, rng, cfg.cell).segments("prior"))
    seg["gp.log_rho"] = np.array(np.log(max(float(np.mean(F0 ** 2)), 1e-2)))
    seg["gp.log_sigma"] = np.array(0.0)
    return ParamVector.from_segments(seg)


BLOCKS = {"F": ("F",), "z": ("z", "prior."), "hyper": ("gp.",)}


def train_poisson_map(x, config: PoissonConfig | None = None, progress=None, **overrides):
    """Coordinate-ascent MAP fit to spike counts ``x`` (N, T) or (B, N, T).

    Returns a :class:`PoissonFit`; ``max_cycles=0`` returns the initialization.
    ``progress(cycle, point, joint)`` is called after every cycle if given.
    """
    cfg = replace(config or PoissonConfig(), **overrides)
    spec = cfg.spec
    x_tm = counts_tm(x)
    B, T, N = x_tm.shape
    const = float(np.sum(log_factorial(x_tm)))
    point = _init_point(x_tm, cfg)
    objective = lambda p: poisson_joint_tm(p, spec, x_tm, const)  # noqa: E731

    def joint(p):
        from ..diffcore import evaluate
        return evaluate(objective, p)

    masks = {b: np.zeros(len(point), dtype=bool) for b in BLOCKS}
    blocks = dict(BLOCKS, hyper=("gp.",) if cfg.learn_sigma else ("gp.log_rho",))
    for b, prefixes in blocks.items():
        for name in point.select(prefixes):
            s = point.layout[name]
            masks[b][s.offset:s.offset + s.size] = True
    decay = np.zeros(len(point), dtype=bool)
    for name in ("prior.W", "prior.U"):
        s = point.layout[name]
        decay[s.offset:s.offset + s.size] = True
    adam = {b: AdamState.zeros(point, lr=cfg.lr) for b in BLOCKS}
    report = TrainReport(config_hash=cfg.hash())
    t0 = time.perf_counter()
    current = joint(point)
    report.iteration.append(0)
    report.objective.append(current)
    report.grad_norm.append(0.0)
    report.elapsed.append(0.0)
    best, calm = current, 0
    for cycle in range(cfg.max_cycles):
        plan = [("F", cfg.f_steps), ("z", cfg.z_steps)]
        if cycle % cfg.hyper_every == cfg.hyper_every - 1:
            plan.append(("hyper", cfg.hyper_steps))
        gnorm = 0.0
        for block, steps in plan:
            wrt = point.select(blocks[block])
            trial, state = point, adam[block]
            try:
                block_obj = f_block_objective(point, spec, x_tm, const) if block == "F" else objective
                for _ in range(steps):
                    _, g = value_and_grad(block_obj, trial, wrt=wrt)
                    if cfg.weight_decay and block == "z":
                        g = g.with_values(g.values - cfg.weight_decay * np.where(decay, trial.values, 0.0))
                    gnorm = g.norm()
                    trial, state = adam_step(trial, clip_gradients(g, cfg.clip), state, mask=masks[block])
                new = joint(trial)
            except (NonFiniteError, np.linalg.LinAlgError, ValueError):
                new = -np.inf
            if not np.isfinite(current):
                raise TrainingError(f"cycle {cycle}: non-finite joint")
            if new >= current - cfg.overshoot_tol * max(1.0, abs(current)):
                point, current, adam[block] = trial, new, state
            else:
                # roll back; the block's moments restart with half the step size
                adam[block] = AdamState.zeros(point, lr=adam[block].hyper.lr * 0.5)
        report.iteration.append(cycle + 1)
        report.objective.append(current)
        report.grad_norm.append(gnorm)
        report.elapsed.append(time.perf_counter() - t0)
        if progress is not None:
            progress(cycle + 1, point, current)
        rel = (current - best) / max(abs(best), 1e-12)
        calm = calm + 1 if rel < cfg.tol else 0
        best = max(best, current)
        if calm >= cfg.patience:
            report.converged = True
            break
    report.best_iteration = report.iteration[-1]
    report.best_objective = current
    report.checkpoint = point
    seg = point.segments()
    model = ParamVector.from_segments({k: v for k, v in seg.items() if k not in ("F", "z")})
    z = np.swapaxes(np.array(seg["z"]), 1, 2)
    fit = PoissonFit(ModelParams(spec, model, np.zeros(N)), np.array(seg["F"]).T,
                     z[0] if np.ndim(x) == 2 else z, report)
    return fit


__all__ = [
    "EPS_RATE", "INIT_WIDTH", "NUGGET", "PoissonConfig", "PoissonFit", "SMOOTH_WIDTH", "counts_tm", "init_f",
    "poisson_joint_tm", "smooth_counts", "smoothing_kernel", "train_poisson_map",
]
