import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gprnn.evaluate import affine_align, dumps_record, metric_record, per_dim_r2, r_squared, rmse_aligned


def _truth(seed=0, L=3, T=60):
    return np.random.default_rng(seed).normal(size=(L, T))


def test_identity_alignment():
    z = _truth()
    amap, aligned = affine_align(z, z)
    np.testing.assert_allclose(amap.A, np.eye(3), atol=1e-10)
    np.testing.assert_allclose(amap.b, 0.0, atol=1e-10)
    np.testing.assert_allclose(aligned, z, atol=1e-10)
    assert rmse_aligned(z, z) < 1e-10


def test_scaled_shifted_estimate_aligns_exactly():
    z = _truth(1)
    np.testing.assert_allclose(affine_align(2 * z + 1, z)[1], z, atol=1e-10)


@pytest.mark.parametrize("seed", range(10))
def test_random_affine_transform_recovered(seed):
    rng = np.random.default_rng(seed)
    z = _truth(seed)
    A0 = rng.normal(size=(3, 3)) + 3 * np.eye(3)
    est = A0 @ z + rng.normal(size=(3, 1))
    np.testing.assert_allclose(affine_align(est, z)[1], z, atol=1e-8)


def _rmse_oracle(est, truth):
    D = np.vstack([est, np.ones(est.shape[1])])
    coef = truth @ np.linalg.pinv(D)
    return np.sqrt(np.mean((coef @ D - truth) ** 2))


def test_rmse_matches_pseudo_inverse_oracle():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        est, truth = rng.normal(size=(2, 40)), rng.normal(size=(3, 40))
        assert abs(rmse_aligned(est, truth) - _rmse_oracle(est, truth)) < 1e-10


def test_rmse_invariant_to_invertible_affine_maps():
    rng = np.random.default_rng(7)
    est, truth = rng.normal(size=(3, 50)), rng.normal(size=(3, 50))
    base = rmse_aligned(est, truth)
    for _ in range(100):
        A = rng.normal(size=(3, 3))
        while abs(np.linalg.det(A)) < 0.1:
            A = rng.normal(size=(3, 3))
        assert abs(rmse_aligned(A @ est + rng.normal(size=(3, 1)), truth) - base) < 1e-8


def test_rmse_zero_iff_truth_in_affine_span():
    rng = np.random.default_rng(3)
    est = rng.normal(size=(2, 30))
    inside = np.array([[1.0, -2.0], [0.5, 0.0]]) @ est + 3.0
    assert rmse_aligned(est, inside) < 1e-10
    outside = np.vstack([inside, rng.normal(size=(1, 30))])
    assert rmse_aligned(est, outside) > 1e-3


def test_constant_residual_rmse():
    # a one-dimensional estimate constant in time leaves exactly the centered truth
    truth = np.array([[1.0, -1.0, 1.0, -1.0]])
    assert abs(rmse_aligned(np.ones((1, 4)), truth) - 1.0) < 1e-12


def test_rank_deficient_uses_ridge():
    z = _truth(2, L=2, T=20)
    est = np.vstack([z[0], z[0]])
    amap, _ = affine_align(est, z)
    assert amap.ridge


def test_batched_trials_align_jointly():
    rng = np.random.default_rng(4)
    z = rng.normal(size=(4, 3, 25))
    est = np.einsum("ij,bjt->bit", rng.normal(size=(3, 3)) + 2 * np.eye(3), z) + 1.0
    _, aligned = affine_align(est, z)
    assert aligned.shape == z.shape
    np.testing.assert_allclose(aligned, z, atol=1e-8)


def test_length_mismatch_raises():
    with pytest.raises(ValueError):
        affine_align(np.zeros((3, 5)), np.zeros((3, 6)))


def test_r_squared_basics():
    t = np.array([1.0, 2.0, 4.0, 3.0])
    assert r_squared(t, t) == 1.0
    assert abs(r_squared(np.full(4, t.mean()), t)) < 1e-15
    assert r_squared(-t, t) < 0
    with pytest.raises(ValueError):
        r_squared(t, np.ones(4))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_r_squared_at_most_one(seed):
    rng = np.random.default_rng(seed)
    t, p = rng.normal(size=10), rng.normal(size=10)
    assert r_squared(p, t) < 1.0


def test_per_dim_r2_perfect_for_affine_copy():
    z = _truth(5)
    assert np.allclose(per_dim_r2(3 * z - 2, z), 1.0)


def test_metric_record_fields():
    rec = metric_record("rmse_aligned", 0.5, 3, "abc", dimension=1)
    assert json.loads(dumps_record(rec)) == {"metric": "rmse_aligned", "value": 0.5, "seed": 3,
                                             "config_hash": "abc", "dimension": 1}
