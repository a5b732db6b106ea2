"""Lorenz ground truth and synthetic observations.

Latents come from the chaotic Lorenz system integrated with classical RK4,
subsampled and standardized per dimension.  Observations are a linear, tanh
or sine readout of the latents plus Gaussian noise, or Poisson counts with
log-rate given by the readout.

``model_spike_trials`` instead samples spike trains from the GP-RNN
generative model itself, for self-consistency checks of co-smoothing.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .observation import ObservationMatrix

DIVERGENCE = 1e6


@dataclass(frozen=True)
class LorenzParams:
    sigma_lz: float = 10.0
    rho_lz: float = 28.0
    beta_lz: float = 8.0 / 3.0
    dt: float = 1e-3
    subsample: int = 50
    burn_in: int = 1000

    def __post_init__(self):
        if self.dt <= 0 or self.subsample < 1 or self.burn_in < 0:
            raise ValueError("dt must be positive, subsample >= 1, burn_in >= 0")


@dataclass
class MappingSpec:
    kind: str               # "linear" | "tanh" | "sine"
    w: np.ndarray           # (L, N)
    phi: np.ndarray         # (N,)
    noise_var: float = 1.0

    def __post_init__(self):
        if self.kind not in MAPPINGS:
            raise ValueError(f"mapping kind must be one of {MAPPINGS}")
        self.w = np.asarray(self.w, dtype=np.float64)
        self.phi = np.asarray(self.phi, dtype=np.float64)
        if not (np.all(np.isfinite(self.w)) and np.all(np.isfinite(self.phi))):
            raise ValueError("mapping weights must be finite")

    @classmethod
    def random(cls, kind, L, N, seed, noise_var=1.0):
        """Weights and offsets drawn Uniform[0, 1]."""
        rng = np.random.default_rng(seed)
        return cls(kind, rng.uniform(0.0, 1.0, (L, N)), rng.uniform(0.0, 1.0, N), noise_var)


MAPPINGS = ("linear", "tanh", "sine")


def lorenz_deriv(z, p: LorenzParams = LorenzParams()):
    z1, z2, z3 = z[0], z[1], z[2]
    return np.array([p.sigma_lz * (z2 - z1),
                     z1 * (p.rho_lz - z3) - z2,
                     z1 * z2 - p.beta_lz * z3])


def rk4_step(z, dt, p):
    k1 = lorenz_deriv(z, p)
    k2 = lorenz_deriv(z + 0.5 * dt * k1, p)
    k3 = lorenz_deriv(z + 0.5 * dt * k2, p)
    k4 = lorenz_deriv(z + dt * k3, p)
    return z + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def rk4_path(z0, p: LorenzParams, n_steps, dt=None):
    """Raw states after 0..n_steps RK4 steps, shape (3, n_steps + 1)."""
    dt = p.dt if dt is None else dt
    z = np.asarray(z0, dtype=np.float64).copy()
    out = np.empty((3, n_steps + 1))
    out[:, 0] = z
    for k in range(n_steps):
        z = rk4_step(z, dt, p)
        if not np.all(np.abs(z) < DIVERGENCE):
            raise FloatingPointError(f"Lorenz integration diverged at step {k + 1}")
        out[:, k + 1] = z
    return out


def standardize(z):
    """Zero mean, unit variance per row; constant rows become zeros."""
    z = np.asarray(z, dtype=np.float64)
    m = z.mean(axis=1, keepdims=True)
    sd = z.std(axis=1, keepdims=True)
    c = z - m
    out = np.zeros_like(z)
    ok = sd[:, 0] > 1e-12 * np.maximum(1.0, np.abs(m[:, 0]))
    out[ok] = c[ok] / sd[ok]
    return out


def lorenz_raw(z0, p: LorenzParams, T):
    """Unstandardized (3, T) states after burn-in, every ``subsample``-th step."""
    if T < 1:
        raise ValueError("T must be >= 1")
    path = rk4_path(z0, p, p.burn_in + p.subsample * T)
    return path[:, p.burn_in + p.subsample::p.subsample][:, :T]


def lorenz_integrate(z0, p: LorenzParams = LorenzParams(), T=200):
    return standardize(lorenz_raw(z0, p, T))


def random_initial_state(seed):
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, 1.0, 3) + np.array([0.0, 0.0, 25.0])


def apply_mapping(z, m: MappingSpec):
    """Noise-free readout (N, T) of latents (L, T)."""
    a = m.w.T @ np.asarray(z, dtype=np.float64) + m.phi[:, None]
    if m.kind == "linear":
        return a
    if m.kind == "tanh":
        return np.tanh(a)
    return np.sin(a)


def generate_observations(F, kind, noise_var=1.0, seed=None):
    rng = np.random.default_rng(seed)
    F = np.asarray(F, dtype=np.float64)
    if kind == "real":
        if noise_var < 0:
            raise ValueError("noise variance must be non-negative")
        x = F + np.sqrt(noise_var) * rng.standard_normal(F.shape) if noise_var > 0 else F.copy()
        return ObservationMatrix(x, "real")
    if kind == "counts":
        with np.errstate(over="ignore"):
            rate = np.exp(F)
        if not np.all(np.isfinite(rate)) or np.any(rate > 1e12):
            raise OverflowError("Poisson rate overflow; log-rates too large")
        return ObservationMatrix(rng.poisson(rate).astype(np.float64), "counts")
    raise ValueError(f"unknown observation kind {kind!r}")


@dataclass
class SyntheticData:
    x: np.ndarray           # (N, T) or (B, N, T)
    z: np.ndarray           # matching latents
    F: np.ndarray
    kind: str
    mapping: MappingSpec | None = None


def lorenz_dataset(mapping="sine", obs="gaussian", N=50, T=200, seed=0,
                   p: LorenzParams = LorenzParams(), noise_var=1.0, extra=0):
    """One Lorenz trial of ``T + extra`` points observed through a random mapping.

    ``extra`` points past ``T`` serve as a held-out forecast window.
    """
    ss = np.random.SeedSequence(seed)
    s_z, s_map, s_obs = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
    z = lorenz_integrate(random_initial_state(s_z), p, T + extra)
    m = MappingSpec.random(mapping, 3, N, s_map, noise_var)
    F = apply_mapping(z, m)
    kind = "real" if obs == "gaussian" else "counts"
    x = generate_observations(F, kind, noise_var, s_obs).values
    return SyntheticData(x, z, F, kind, m)


def lorenz_trials(mapping="sine", obs="gaussian", N=50, T=200, seed=0, trials=1,
                  p: LorenzParams = LorenzParams(), noise_var=1.0):
    """``trials`` Lorenz trials observed through one shared random mapping.

    Trials differ in initial state and observation noise; x is (B, N, T).
    """
    ss = np.random.SeedSequence(seed)
    s_map, s_rest = ss.spawn(2)
    m = MappingSpec.random(mapping, 3, N, int(s_map.generate_state(1)[0]), noise_var)
    kind = "real" if obs == "gaussian" else "counts"
    xs, zs, Fs = [], [], []
    for child in s_rest.spawn(trials):
        s_z, s_obs = (int(c.generate_state(1)[0]) for c in child.spawn(2))
        z = lorenz_integrate(random_initial_state(s_z), p, T)
        F = apply_mapping(z, m)
        xs.append(generate_observations(F, kind, noise_var, s_obs).values)
        zs.append(z)
        Fs.append(F)
    return SyntheticData(np.stack(xs), np.stack(zs), np.stack(Fs), kind, m)


# ----------------------------------------------------------------------------
# spike trains from the generative model

def oscillator_paths(L, T, trials, seed, period=(30.0, 60.0)):
    """Unit-amplitude sinusoids (trials, L, T) with random periods and phases."""
    rng = np.random.default_rng(seed)
    w = 2 * np.pi / rng.uniform(*period, size=L)
    phase = rng.uniform(0, 2 * np.pi, size=(trials, L, 1))
    return np.sqrt(2.0) * np.sin(w[None, :, None] * np.arange(T) + phase)


def fit_rnn_prior(z, H=30, steps=300, lr=1e-2, seed=0, cell="lstm"):
    """RNN prior fitted by maximum likelihood to latent paths z (B, L, T)."""
    from .diffcore import AdamState, ParamVector, adam_step, clip_gradients, value_and_grad
    from .dynamics import RnnParams, init_rnn_params, latent_log_prior
    z = np.asarray(z, dtype=np.float64)
    point = ParamVector.from_segments(
        init_rnn_params(z.shape[-2], H, seed, cell).segments("prior"))
    state = AdamState.zeros(point, lr=lr)
    objective = lambda p: latent_log_prior(RnnParams.from_segments(p, "prior", cell), z)  # noqa: E731
    for _ in range(steps):
        _, g = value_and_grad(objective, point)
        point, state = adam_step(point, clip_gradients(g, 5.0), state)
    seg = {k: np.array(v) for k, v in point.segments().items()}
    return RnnParams.from_segments(seg, "prior", cell)


def model_spike_trials(L=2, N=50, T=30, trials=50, seed=0, rho=4.0, sigma=2.0, H=30,
                       fit_steps=300, jitter=1e-4):
    """Counts sampled from the GP-RNN model.

    The RNN prior is first fitted to smooth oscillator paths so that its
    samples are smooth; latents for every trial are then drawn from it, one
    tuning function per neuron is drawn from GP(0, k) jointly over all trials'
    time points, and counts are Poisson(exp(f)).  Returns SyntheticData with
    x (trials, N, T) and z (trials, L, T).
    """
    from .dynamics import sample_prior
    from .gpmap import GpHyper, gram_matrix
    ss = np.random.SeedSequence(seed)
    s_path, s_rnn, s_z, s_f, s_obs = (int(c.generate_state(1)[0]) for c in ss.spawn(5))
    rnn = fit_rnn_prior(oscillator_paths(L, T, 8, s_path), H, fit_steps, seed=s_rnn)
    z = sample_prior(rnn, T, seed=s_z, n_trials=trials)                   # (B, L, T)
    pts = np.concatenate(list(z), axis=1)                                  # (L, B*T)
    K = gram_matrix(pts, GpHyper(rho, sigma, jitter))
    chol = np.linalg.cholesky(K)
    F = (chol @ np.random.default_rng(s_f).standard_normal((K.shape[0], N))).T
    F = np.stack(np.split(F, trials, axis=1))                              # (B, N, T)
    x = generate_observations(F, "counts", seed=s_obs).values
    return SyntheticData(x, z, F, "counts")


__all__ = [
    "LorenzParams", "MAPPINGS", "MappingSpec", "SyntheticData", "apply_mapping",
    "generate_observations", "lorenz_dataset", "lorenz_deriv", "lorenz_integrate",
    "lorenz_raw", "lorenz_trials", "model_spike_trials", "oscillator_paths", "fit_rnn_prior",
    "random_initial_state", "rk4_path", "rk4_step", "standardize",
]
