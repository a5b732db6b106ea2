import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gprnn.simulate import (
    LorenzParams, MappingSpec, apply_mapping, fit_rnn_prior, generate_observations, lorenz_dataset,
    model_spike_trials, oscillator_paths,
    lorenz_deriv, lorenz_integrate, lorenz_raw, random_initial_state, rk4_path, standardize,
)

P = LorenzParams()


def test_deriv_fixed_point_at_origin():
    np.testing.assert_array_equal(lorenz_deriv(np.zeros(3), P), np.zeros(3))


def test_deriv_direct_evaluation():
    np.testing.assert_allclose(lorenz_deriv(np.ones(3), P), [0.0, 26.0, 1.0 - 8.0 / 3.0], atol=1e-14)


@pytest.mark.parametrize("sign", [1.0, -1.0])
def test_deriv_nontrivial_fixed_points(sign):
    r = np.sqrt(P.beta_lz * (P.rho_lz - 1.0))
    z = np.array([sign * r, sign * r, P.rho_lz - 1.0])
    assert np.max(np.abs(lorenz_deriv(z, P))) < 1e-10


def _endpoint(z0, dt, t_end=1.0):
    n = int(round(t_end / dt))
    return rk4_path(z0, P, n, dt=dt)[:, -1]


def rk4_orders(n_inits=10, dt=0.005, t_end=0.5):
    rng = np.random.default_rng(0)
    orders = []
    for _ in range(n_inits):
        z0 = rng.normal(size=3) * 5.0 + np.array([0.0, 0.0, 20.0])
        ref = _endpoint(z0, dt / 100, t_end)
        e1 = np.linalg.norm(_endpoint(z0, dt, t_end) - ref)
        e2 = np.linalg.norm(_endpoint(z0, dt / 2, t_end) - ref)
        orders.append(np.log2(e1 / e2))
    return np.array(orders)


def test_rk4_fourth_order_convergence():
    orders = rk4_orders()
    assert np.all((orders >= 3.5) & (orders <= 4.5)), orders


def test_default_step_matches_fine_reference():
    z0 = np.ones(3)
    coarse = rk4_path(z0, P, 1000)[:, -1]
    fine = rk4_path(z0, P, 100_000, dt=1e-5)[:, -1]
    assert np.max(np.abs(coarse - fine)) < 1e-4


def test_origin_path_standardizes_to_zeros():
    z = lorenz_integrate(np.zeros(3), P, 20)
    assert z.shape == (3, 20)
    np.testing.assert_array_equal(z, 0.0)


def test_standardized_moments():
    z = lorenz_integrate(random_initial_state(3), P, 200)
    assert np.all(np.abs(z.mean(axis=1)) < 1e-10)
    assert np.all(np.abs(z.var(axis=1) - 1.0) < 1e-10)


def test_standardize_constant_row_is_zero():
    out = standardize(np.array([[1.0, 2.0, 3.0], [5.0, 5.0, 5.0]]))
    np.testing.assert_array_equal(out[1], 0.0)
    assert abs(out[0].var() - 1.0) < 1e-12


def test_subsampling_picks_every_kth_state():
    p = LorenzParams(subsample=7, burn_in=13)
    raw = lorenz_raw(np.ones(3), p, 5)
    path = rk4_path(np.ones(3), p, 13 + 7 * 5)
    np.testing.assert_array_equal(raw, path[:, [20, 27, 34, 41, 48]])


def test_divergence_raises():
    with pytest.raises(FloatingPointError):
        rk4_path(np.array([1e5, 1e5, 1e5]), P, 100, dt=0.1)


def test_invalid_params_and_length():
    with pytest.raises(ValueError):
        LorenzParams(dt=0.0)
    with pytest.raises(ValueError):
        lorenz_raw(np.ones(3), P, 0)


def test_linear_identity_mapping():
    z = np.random.default_rng(0).normal(size=(3, 10))
    m = MappingSpec("linear", np.eye(3), np.zeros(3))
    np.testing.assert_array_equal(apply_mapping(z, m), z)


def test_sine_of_zero_argument_is_zero():
    z = np.zeros((3, 8))
    m = MappingSpec("sine", np.ones((3, 4)), np.zeros(4))
    np.testing.assert_array_equal(apply_mapping(z, m), 0.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(-1e3, 1e3), st.integers(0, 2**31 - 1))
def test_tanh_mapping_bounded(scale, seed):
    m = MappingSpec.random("tanh", 3, 6, seed)
    z = scale * np.random.default_rng(seed).normal(size=(3, 5))
    out = apply_mapping(z, m)
    assert np.all(np.abs(out) <= 1.0)


def test_mapping_weights_uniform_and_reproducible():
    a, b = MappingSpec.random("sine", 3, 50, 11), MappingSpec.random("sine", 3, 50, 11)
    np.testing.assert_array_equal(a.w, b.w)
    np.testing.assert_array_equal(a.phi, b.phi)
    assert a.w.min() >= 0.0 and a.w.max() < 1.0 and a.phi.min() >= 0.0


def test_mapping_kind_validated():
    with pytest.raises(ValueError):
        MappingSpec("cubic", np.ones((1, 1)), np.ones(1))


def test_zero_noise_returns_rates():
    F = np.random.default_rng(1).normal(size=(4, 6))
    np.testing.assert_array_equal(generate_observations(F, "real", 0.0, 0).values, F)


def test_counts_at_zero_log_rate_have_unit_mean():
    x = generate_observations(np.zeros((100, 1000)), "counts", seed=5).values
    assert abs(x.mean() - 1.0) < 3 * np.sqrt(1.0 / x.size)
    assert np.all(x >= 0) and np.all(x == np.round(x))


def test_same_seed_same_observations():
    F = np.zeros((3, 4))
    a = generate_observations(F, "real", 1.0, 9).values
    np.testing.assert_array_equal(a, generate_observations(F, "real", 1.0, 9).values)


def test_rate_overflow_raises():
    with pytest.raises(OverflowError):
        generate_observations(np.full((1, 1), 800.0), "counts", seed=0)


def test_dataset_shapes_and_forecast_window():
    d = lorenz_dataset("tanh", "gaussian", N=7, T=30, seed=2, extra=10)
    assert d.x.shape == (7, 40) and d.z.shape == (3, 40)
    c = lorenz_dataset("linear", "poisson", N=5, T=20, seed=2)
    assert c.kind == "counts" and np.all(c.x >= 0)


def test_oscillator_paths_shape_and_power():
    z = oscillator_paths(2, 120, 5, seed=1)
    assert z.shape == (5, 2, 120)
    assert np.mean(z ** 2) == pytest.approx(1.0, abs=0.1)


def test_fitted_prior_prefers_smooth_paths():
    from gprnn.dynamics import latent_log_prior
    z = oscillator_paths(1, 30, 4, seed=0)
    rnn = fit_rnn_prior(z, H=4, steps=60, seed=0)
    rough = np.random.default_rng(0).normal(size=z.shape)
    assert float(latent_log_prior(rnn, z)) > float(latent_log_prior(rnn, rough))


def test_model_spike_trials_shapes_and_determinism():
    kw = dict(L=2, N=4, T=6, trials=3, seed=5, H=3, fit_steps=5)
    d = model_spike_trials(**kw)
    assert d.x.shape == (3, 4, 6) and d.z.shape == (3, 2, 6) and d.F.shape == (3, 4, 6)
    assert d.kind == "counts" and np.all(d.x >= 0) and np.all(d.x == np.round(d.x))
    np.testing.assert_array_equal(d.x, model_spike_trials(**kw).x)
