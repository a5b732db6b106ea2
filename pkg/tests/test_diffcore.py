import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gprnn.diffcore import (
    AdamState, GradVector, NonFiniteError, ParamVector, adam_step, clip_gradients,
    finite_diff_check, grad, gru_cell, gru_sequence, lstm_cell, lstm_sequence,
    mvn_logpdf, ops, rbf_cross, rbf_predict, value_and_grad,
)
from gprnn.diffcore.tape import Node, lift


def pv(**arrays):
    return ParamVector.from_segments({k: np.asarray(v, dtype=float) for k, v in arrays.items()})


# ---------------------------------------------------------------- grad


def test_grad_square():
    g = grad(lambda p: p["t"] * p["t"], pv(t=3.0))
    assert g.values.tolist() == [6.0]


def test_grad_linear_sum():
    g = grad(lambda p: ops.sum(p["t"]), pv(t=np.random.default_rng(0).normal(size=4)))
    np.testing.assert_array_equal(g.values, np.ones(4))


def test_grad_one_step_lstm_loss_matches_fd():
    # five free parameters: one input weight per gate plus the output read-out
    rng = np.random.default_rng(3)
    x = rng.normal(size=(1, 1, 1))
    point = pv(w=rng.normal(size=4), v=rng.normal())

    def loss(p):
        W = ops.reshape(p["w"], (1, 4))
        h = lstm_sequence(x, W, np.zeros((1, 4)), np.zeros(4))
        return ops.sum(ops.square(h * p["v"] - 0.3))

    rep = finite_diff_check(loss, point, step=1e-5, tol=1e-6)
    assert rep.passed, rep


def test_nonfinite_names_node():
    with pytest.raises(NonFiniteError, match="log"):
        grad(lambda p: ops.sum(ops.log(p["t"])), pv(t=[1.0, -1.0]))


# ---------------------------------------------------------------- finite differences


def test_fd_cubic_passes():
    rep = finite_diff_check(lambda p: p["t"] ** 3, pv(t=2.0), step=1e-5, tol=1e-4)
    assert rep.passed
    assert rep.analytic == 12.0


def test_fd_abs_at_kink_fails():
    rep = finite_diff_check(lambda p: ops.abs(p["t"]), pv(t=0.0), step=1e-5, tol=1e-4)
    assert not rep.passed
    assert rep.nondifferentiable == (0,)


def test_fd_detects_wrong_gradient():
    def bad(x):
        x = lift(x)
        return Node(np.sin(x.value), (x,), lambda g: (g * 2 * np.cos(x.value),), "bad_sin")

    rep = finite_diff_check(lambda p: ops.sum(bad(p["t"])), pv(t=[0.3, 0.4]))
    assert not rep.passed


def test_fd_nonfinite_objective_raises():
    with pytest.raises(FloatingPointError):
        finite_diff_check(lambda p: ops.sum(ops.log(p["t"])), pv(t=[1e-6]), step=1e-5)


def test_fd_rejects_bad_step():
    with pytest.raises(ValueError):
        finite_diff_check(lambda p: p["t"], pv(t=1.0), step=0.0)


# ---------------------------------------------------------------- registered ops
# Each entry builds a scalar objective from the named inputs and an input generator.


def _spd(rng, n):
    A = rng.normal(size=(n, n))
    return A @ A.T + n * np.eye(n)


OPS = {
    "add": (lambda p: ops.sum(ops.add(p["a"], p["b"]) ** 2),
            lambda r: dict(a=r.normal(size=(2, 3)), b=r.normal(size=(3,)))),
    "sub": (lambda p: ops.sum(ops.sub(p["a"], p["b"]) ** 2),
            lambda r: dict(a=r.normal(size=(2, 3)), b=r.normal(size=(2, 1)))),
    "mul": (lambda p: ops.sum(ops.mul(p["a"], p["b"])),
            lambda r: dict(a=r.normal(size=(3,)), b=r.normal(size=(2, 3)))),
    "div": (lambda p: ops.sum(ops.div(p["a"], p["b"])),
            lambda r: dict(a=r.normal(size=3), b=r.uniform(0.5, 2.0, size=3))),
    "neg": (lambda p: ops.sum(ops.neg(p["a"]) * p["a"]), lambda r: dict(a=r.normal(size=3))),
    "power": (lambda p: ops.sum(ops.power(p["a"], 3)), lambda r: dict(a=r.normal(size=3))),
    "square": (lambda p: ops.sum(ops.square(p["a"])), lambda r: dict(a=r.normal(size=3))),
    "sqrt": (lambda p: ops.sum(ops.sqrt(p["a"])), lambda r: dict(a=r.uniform(0.5, 2, size=3))),
    "exp": (lambda p: ops.sum(ops.exp(p["a"])), lambda r: dict(a=r.normal(size=3))),
    "exp_clamped": (lambda p: ops.sum(ops.exp_clamped(p["a"])), lambda r: dict(a=r.normal(size=3))),
    "log": (lambda p: ops.sum(ops.log(p["a"])), lambda r: dict(a=r.uniform(0.5, 2, size=3))),
    "tanh": (lambda p: ops.sum(ops.tanh(p["a"])), lambda r: dict(a=r.normal(size=3))),
    "sigmoid": (lambda p: ops.sum(ops.sigmoid(p["a"])), lambda r: dict(a=r.normal(size=3))),
    "softplus": (lambda p: ops.sum(ops.softplus(p["a"])), lambda r: dict(a=r.normal(size=3))),
    "matmul": (lambda p: ops.sum(ops.tanh(ops.matmul(p["a"], p["b"]))),
               lambda r: dict(a=r.normal(size=(2, 2, 3)), b=r.normal(size=(3, 2)))),
    "sum_axis": (lambda p: ops.sum(ops.square(ops.sum(p["a"], axis=1))),
                 lambda r: dict(a=r.normal(size=(2, 3)))),
    "reshape": (lambda p: ops.sum(ops.reshape(p["a"], (3, 2)) @ np.ones((2, 1)) * np.arange(3.0)[:, None]),
                lambda r: dict(a=r.normal(size=(2, 3)))),
    "transpose": (lambda p: ops.sum(ops.transpose(p["a"]) * np.arange(6.0).reshape(3, 2)),
                  lambda r: dict(a=r.normal(size=(2, 3)))),
    "swapaxes": (lambda p: ops.sum(ops.swapaxes(p["a"], 0, 1) * np.arange(6.0).reshape(3, 2)),
                 lambda r: dict(a=r.normal(size=(2, 3)))),
    "flip": (lambda p: ops.sum(ops.flip(p["a"], 1) * np.arange(3.0)), lambda r: dict(a=r.normal(size=(2, 3)))),
    "getitem": (lambda p: ops.sum(ops.square(p["a"][:, 1:])) + ops.sum(p["a"][[0, 0], [1, 1]] * 2.0),
                lambda r: dict(a=r.normal(size=(2, 3)))),
    "concat": (lambda p: ops.sum(ops.concat([p["a"], p["b"]], axis=1) * np.arange(5.0)),
               lambda r: dict(a=r.normal(size=(2, 2)), b=r.normal(size=(2, 3)))),
    "stack": (lambda p: ops.sum(ops.square(ops.stack([p["a"], p["b"]], axis=1))),
              lambda r: dict(a=r.normal(size=3), b=r.normal(size=3))),
    "gaussian_logpdf": (lambda p: ops.gaussian_logpdf(p["x"], p["m"], p["v"]),
                        lambda r: dict(x=r.normal(size=4), m=r.normal(size=4), v=r.uniform(0.5, 2, size=4))),
    "rbf_cross": (lambda p: ops.sum(rbf_cross(p["z1"], p["z2"], p["rho"], p["sig"]) * np.arange(12.0).reshape(3, 4)),
                  lambda r: dict(z1=r.normal(size=(3, 2)), z2=r.normal(size=(4, 2)),
                                 rho=r.uniform(0.5, 2), sig=r.uniform(0.5, 2))),
    "rbf_gram_shared": (lambda p: ops.sum(rbf_cross(p["z"], p["z"], 1.3, p["sig"]) * np.arange(9.0).reshape(3, 3)),
                        lambda r: dict(z=r.normal(size=(1, 3, 2)), sig=r.uniform(0.5, 2))),
    "rbf_predict": (lambda p: ops.sum(rbf_predict(p["zs"], np.array([[0.1, -0.3], [1.0, 0.4], [-0.7, 0.9]]),
                                                  np.arange(6.0).reshape(3, 2) - 2.5, 1.4, 0.8) * np.arange(8.0).reshape(2, 2, 2)),
                    lambda r: dict(zs=r.normal(size=(2, 2, 2)))),
    "mvn_logpdf": (lambda p: mvn_logpdf(p["Y"], ops.matmul(p["A"], ops.transpose(p["A"])) + 3.0 * np.eye(3)),
                   lambda r: dict(Y=r.normal(size=(3, 2)), A=r.normal(size=(3, 3)))),
    "mvn_logpdf_batched": (lambda p: mvn_logpdf(p["Y"], ops.matmul(p["A"], ops.swapaxes(p["A"], 1, 2)) + 3.0 * np.eye(3)),
                           lambda r: dict(Y=r.normal(size=(2, 3, 2)), A=r.normal(size=(2, 3, 3)))),
    "lstm_sequence": (lambda p: ops.sum(ops.square(lstm_sequence(p["X"], p["W"], p["U"], p["b"]) - 0.1)),
                      lambda r: dict(X=r.normal(size=(2, 3, 2)), W=r.normal(size=(2, 8)),
                                     U=r.normal(size=(2, 8)), b=r.normal(size=8))),
    "gru_sequence": (lambda p: ops.sum(ops.square(gru_sequence(p["X"], p["W"], p["U"], p["b"]) - 0.1)),
                     lambda r: dict(X=r.normal(size=(2, 3, 2)), W=r.normal(size=(2, 6)),
                                    U=r.normal(size=(2, 6)), b=r.normal(size=6))),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_registered_op_matches_finite_differences(name):
    fn, gen = OPS[name]
    worst = 0.0
    for seed in range(100):
        point = pv(**gen(np.random.default_rng(seed)))
        rep = finite_diff_check(fn, point, step=1e-5, tol=1e-6)
        worst = max(worst, rep.max_relative_error)
        assert rep.passed, (name, seed, rep)
    assert worst < 1e-6


def test_rbf_predict_matches_cross_kernel_product():
    rng = np.random.default_rng(3)
    zs, ztr, alpha = rng.normal(size=(2, 5, 3)), rng.normal(size=(7, 3)), rng.normal(size=(7, 4))
    want = rbf_cross(zs, ztr, 0.9, 1.3).value @ alpha
    np.testing.assert_allclose(rbf_predict(zs, ztr, alpha, 0.9, 1.3).value, want, atol=1e-12)


def test_lstm_sequence_matches_cell_loop():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(2, 5, 3))
    W, U, b = rng.normal(size=(3, 16)), rng.normal(size=(4, 16)), rng.normal(size=16)
    hs = lstm_sequence(X, W, U, b).value
    h = c = np.zeros((2, 4))
    for t in range(5):
        h, c = lstm_cell(X[:, t], h, c, W, U, b)
        np.testing.assert_allclose(hs[:, t], h, atol=1e-14)


def test_gru_sequence_matches_cell_loop():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(2, 5, 3))
    W, U, b = rng.normal(size=(3, 12)), rng.normal(size=(4, 12)), rng.normal(size=12)
    hs = gru_sequence(X, W, U, b).value
    h = np.zeros((2, 4))
    for t in range(5):
        h = gru_cell(X[:, t], h, W, U, b)
        np.testing.assert_allclose(hs[:, t], h, atol=1e-14)


def test_mvn_logpdf_against_scipy():
    from scipy.stats import multivariate_normal
    rng = np.random.default_rng(0)
    K = _spd(rng, 4)
    Y = rng.normal(size=(4, 3))
    expect = sum(multivariate_normal(np.zeros(4), K).logpdf(Y[:, j]) for j in range(3))
    assert float(mvn_logpdf(Y, K)) == pytest.approx(expect, rel=1e-12)


# ---------------------------------------------------------------- optimizer & clipping


def test_adam_zero_gradient_keeps_params():
    p = pv(a=[1.0, -2.0])
    st0 = AdamState.zeros(p)
    p1, st1 = adam_step(p, GradVector(np.zeros(2), p.layout), st0)
    assert p1 == p
    np.testing.assert_array_equal(st1.m, 0)
    np.testing.assert_array_equal(st1.v, 0)
    assert st1.step == 1


def test_adam_first_step_ascends_by_lr():
    p = pv(a=0.0)
    st0 = AdamState.zeros(p, lr=0.1)
    p1, _ = adam_step(p, GradVector([2.0], p.layout), st0)
    # mhat = 2, vhat = 4 -> 0.1 * 2 / (2 + 1e-8)
    assert p1.values[0] == pytest.approx(0.1 * 2.0 / (2.0 + 1e-8), abs=1e-15)


def test_adam_second_identical_step_is_smaller():
    p = pv(a=0.0)
    g = GradVector([2.0], p.layout)
    p1, s1 = adam_step(p, g, AdamState.zeros(p, lr=0.1))
    p2, _ = adam_step(p1, g, s1)
    first, second = p1.values[0], p2.values[0] - p1.values[0]
    # hand-evaluated recurrences for the second step
    m2 = 0.9 * 0.2 + 0.1 * 2.0
    v2 = 0.999 * 0.004 + 0.001 * 4.0
    expect = 0.1 * (m2 / (1 - 0.81)) / (np.sqrt(v2 / (1 - 0.999 ** 2)) + 1e-8)
    assert second == pytest.approx(expect, rel=1e-12)
    assert second <= first


def test_adam_layout_mismatch():
    p = pv(a=[0.0, 1.0])
    q = pv(b=[0.0, 1.0])
    with pytest.raises(ValueError):
        adam_step(p, GradVector(q.values, q.layout), AdamState.zeros(p))


def test_adam_deterministic():
    rng = np.random.default_rng(5)
    p = pv(a=rng.normal(size=7))
    g = GradVector(rng.normal(size=7), p.layout)
    s = AdamState.zeros(p)
    a1, s1 = adam_step(p, g, s)
    a2, s2 = adam_step(p, g, s)
    assert a1.values.tobytes() == a2.values.tobytes()
    assert s1.v.tobytes() == s2.v.tobytes()


def test_clip_examples():
    lay = pv(a=[0.0, 0.0]).layout
    small = GradVector([0.1, 0.1], lay)
    assert clip_gradients(small, 1.0) is small
    np.testing.assert_allclose(clip_gradients(GradVector([3.0, 4.0], lay), 1.0).values, [0.6, 0.8])
    np.testing.assert_array_equal(clip_gradients(GradVector([0.0, 0.0], lay), 1.0).values, [0, 0])


@given(arrays(np.float64, st.integers(1, 8), elements=st.floats(-1e6, 1e6)),
       st.floats(1e-3, 1e3))
def test_clip_norm_bound_and_direction(g, max_norm):
    lay = pv(a=np.zeros(g.size)).layout
    out = clip_gradients(GradVector(g, lay), max_norm).values
    assert np.linalg.norm(out) <= max_norm + 1e-12 or np.allclose(out, g)
    if np.linalg.norm(g) > 0 and np.linalg.norm(out) > 0:
        cos = out @ g / (np.linalg.norm(out) * np.linalg.norm(g))
        assert cos == pytest.approx(1.0, abs=1e-12)


# ---------------------------------------------------------------- parameter vectors


@settings(max_examples=50)
@given(st.lists(st.tuples(st.integers(1, 3), st.integers(1, 3)), min_size=1, max_size=4), st.data())
def test_segment_roundtrip(shapes, data):
    segs = {f"s{i}": np.zeros(s) for i, s in enumerate(shapes)}
    p = ParamVector.from_segments(segs)
    name = data.draw(st.sampled_from(sorted(segs)))
    new = data.draw(arrays(np.float64, segs[name].shape, elements=st.floats(-1e9, 1e9)))
    q = p.with_segment(name, new)
    np.testing.assert_array_equal(q.get(name), new)
    for other in segs:
        if other != name:
            np.testing.assert_array_equal(q.get(other), p.get(other))


def test_param_vector_rejects_nonfinite():
    with pytest.raises(ValueError):
        pv(a=[np.nan])


def test_value_and_grad_respects_wrt():
    p = pv(a=2.0, b=3.0)
    val, g = value_and_grad(lambda d: d["a"] * d["b"], p, wrt=["a"])
    assert val == 6.0
    assert g.get("a") == 3.0 and g.get("b") == 0.0


def test_cho_inverse_and_factored_logpdf():
    from gprnn.diffcore import cho_inverse, mvn_logpdf_factored
    rng = np.random.default_rng(11)
    K = _spd(rng, 5)
    Lc = np.linalg.cholesky(K)
    np.testing.assert_allclose(cho_inverse(Lc), np.linalg.inv(K), rtol=1e-10, atol=1e-12)
    Y = rng.normal(size=(5, 3))
    assert float(mvn_logpdf_factored(Y, Lc).value) == pytest.approx(float(mvn_logpdf(Y, K).value), abs=1e-12)
    rep = finite_diff_check(lambda p: mvn_logpdf_factored(p["Y"], Lc), pv(Y=Y), tol=1e-6)
    assert rep.passed, rep
