import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import poisson

from gprnn.diffcore import ParamVector, finite_diff_check, ops
from gprnn.dynamics import init_rnn_params, latent_log_prior, zero_rnn_params
from gprnn.gpmap import GpHyper, gp_log_prior_f
from gprnn.observation import (
    ObservationMatrix, gaussian_loglik, joint_log_prob_poisson, poisson_loglik,
)

LOG2PI = np.log(2 * np.pi)


def test_gaussian_values():
    assert float(gaussian_loglik([[1.0]], [[1.0]], 1.0)) == pytest.approx(-0.5 * LOG2PI)
    assert float(gaussian_loglik([[2.0]], [[1.0]], 1.0)) == pytest.approx(-0.5 * (1 + LOG2PI))
    x, F = np.array([[0.0, 1.0]]), np.array([[0.5, 0.2]])
    assert float(gaussian_loglik(x, F, 1.0)) > float(gaussian_loglik(x, 2 * F - x, 1.0))


def test_gaussian_rejects_nonpositive_noise():
    with pytest.raises(ValueError):
        gaussian_loglik([[0.0]], [[0.0]], 0.0)


def test_poisson_values():
    assert float(poisson_loglik([[0]], [[0.0]])) == pytest.approx(-1.0)
    assert float(poisson_loglik([[2]], [[0.0]])) == pytest.approx(-1 - np.log(2))
    assert float(poisson_loglik([[1]], [[np.log(2)]])) == pytest.approx(np.log(2) - 2)


def test_poisson_rejects_negative():
    with pytest.raises(ValueError):
        poisson_loglik([[-1]], [[0.0]])
    with pytest.raises(ValueError):
        ObservationMatrix(np.array([[0.5]]), "counts")


@pytest.mark.parametrize("seed", range(10))
def test_poisson_matches_pmf(seed):
    rng = np.random.default_rng(seed)
    F = rng.normal(size=(3, 5))
    x = rng.poisson(np.exp(F))
    assert float(poisson_loglik(x, F)) == pytest.approx(
        np.sum(poisson.logpmf(x, np.exp(F))), abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5))
def test_poisson_partition_invariance(seed, k):
    rng = np.random.default_rng(seed)
    F = rng.normal(size=(4, 6))
    x = rng.poisson(np.exp(F))
    parts = np.array_split(np.arange(24), k)
    total = sum(float(poisson_loglik(x.ravel()[p], F.ravel()[p])) for p in parts)
    assert total == pytest.approx(float(poisson_loglik(x, F)), abs=1e-9)


def test_poisson_sampled_counts_finite():
    rng = np.random.default_rng(0)
    F = rng.normal(size=(5, 50)) * 3
    x = rng.poisson(np.exp(F))
    assert np.isfinite(float(poisson_loglik(x, F)))


def test_exp_clamp_counts_events():
    before = ops.clamp_events["exp_clamped"]
    val = float(poisson_loglik([[0]], [[40.0]]))
    assert val == pytest.approx(-np.exp(30.0))
    assert ops.clamp_events["exp_clamped"] == before + 1


def test_joint_is_sum_of_parts():
    rng = np.random.default_rng(1)
    rnn, h = init_rnn_params(2, 3, rng), GpHyper(1.0, 1.0)
    z, F = rng.normal(size=(2, 4)), rng.normal(size=(3, 4))
    x = rng.poisson(np.exp(F))
    parts = float(poisson_loglik(x, F)) + float(gp_log_prior_f(F, z, h)) + float(latent_log_prior(rnn, z))
    assert float(joint_log_prob_poisson(x, F, z, rnn, h)) == parts


def test_joint_scalar_composition():
    rnn = zero_rnn_params(1, 2)
    rnn.head.bvar = np.array([np.log(np.e - 1)])
    h = GpHyper(1.0, 1.0, jitter=1e-14)
    val = float(joint_log_prob_poisson([[0]], np.zeros((1, 1)), np.zeros((1, 1)), rnn, h))
    assert val == pytest.approx(-1.0 - 0.5 * LOG2PI - 0.5 * LOG2PI, abs=1e-12)


def test_joint_count_change_only_touches_poisson_term():
    rng = np.random.default_rng(2)
    rnn, h = init_rnn_params(1, 2, rng), GpHyper()
    z, F = rng.normal(size=(1, 3)), rng.normal(size=(2, 3))
    x = rng.poisson(np.exp(F))
    x2 = x.copy()
    x2[1, 2] += 3
    d_joint = float(joint_log_prob_poisson(x2, F, z, rnn, h)) - float(joint_log_prob_poisson(x, F, z, rnn, h))
    d_pois = float(poisson_loglik(x2, F)) - float(poisson_loglik(x, F))
    assert d_joint == pytest.approx(d_pois, abs=1e-10)


def test_joint_gradient_fd():
    rng = np.random.default_rng(3)
    rnn, h = init_rnn_params(2, 3, rng), GpHyper(1.0, 1.2)
    F0 = rng.normal(size=(3, 5))
    x = rng.poisson(np.exp(F0))
    point = ParamVector.from_segments({"F": F0, "z": rng.normal(size=(2, 5))})
    rep = finite_diff_check(lambda p: joint_log_prob_poisson(x, p["F"], p["z"], rnn, h), point, tol=1e-4)
    assert rep.passed, rep
