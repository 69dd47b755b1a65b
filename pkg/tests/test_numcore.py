import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rcnp.numcore import AdamState, CholeskyError, Tape, ad, adam_step, cho_solve, cholesky, grad_check, tri_solve
from rcnp.numcore.linalg import logdet_from_chol

finite = st.floats(-5, 5, allow_nan=False)


def fd_grad(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


# ------------------------------------------------------------------ matmul


def test_matmul_identity(rng):
    a = rng.standard_normal((2, 3))
    np.testing.assert_array_equal(ad.matmul(np.eye(2), a), a)


def test_matmul_hand_case():
    np.testing.assert_array_equal(ad.matmul(np.array([[1.0, 2], [3, 4]]), np.array([[1.0], [1]])), [[3], [7]])


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_adjoints_match_finite_differences(rng):
    a0, b0 = rng.standard_normal((5, 4)), rng.standard_normal((4, 3))
    w = rng.standard_normal((5, 3))
    tape = Tape()
    a, b = tape.leaf(a0), tape.leaf(b0)
    out = ad.reduce_sum(ad.mul(ad.matmul(a, b), w))
    ga, gb = tape.grad(out, [a, b])
    na = fd_grad(lambda x: np.sum((x @ b0) * w), a0)
    nb = fd_grad(lambda x: np.sum((a0 @ x) * w), b0)
    assert np.max(np.abs(ga - na) / np.maximum(1, np.abs(ga))) < 1e-6
    assert np.max(np.abs(gb - nb) / np.maximum(1, np.abs(gb))) < 1e-6


# ------------------------------------------------------------- elementwise


def test_relu_negative():
    assert ad.relu(np.array(-1.5)) == 0.0


def test_relu_subgradient_at_zero_is_zero():
    tape = Tape()
    x = tape.leaf(np.zeros(3))
    (g,) = tape.grad(ad.reduce_sum(ad.relu(x)), [x])
    np.testing.assert_array_equal(g, 0.0)


def test_softplus_closed_forms():
    assert abs(float(ad.softplus(np.array(0.0))) - np.log(2.0)) < 1e-15
    assert abs(float(ad.softplus(np.array(50.0))) - 50.0) < 1e-9
    assert np.isfinite(ad.softplus(np.array([1e4, -1e4]))).all()


def test_log_of_nonpositive_raises():
    with pytest.raises(ValueError):
        ad.log(np.array([1.0, 0.0]))


def test_broadcasting_limited_to_scalar_or_equal_shape():
    with pytest.raises(ValueError):
        ad.add(np.ones((2, 3)), np.ones(3))
    np.testing.assert_array_equal(ad.add(np.ones((2, 3)), 2.0), 3.0)


UNARY = {
    "relu": (ad.relu, lambda x: np.maximum(x, 0)),
    "tanh": (ad.tanh, np.tanh),
    "exp": (ad.exp, np.exp),
    "log": (ad.log, np.log),
    "softplus": (ad.softplus, lambda x: np.log1p(np.exp(x))),
    "square": (ad.square, np.square),
    "sqrt": (ad.sqrt, np.sqrt),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_ops_gradients(name, rng):
    op, ref = UNARY[name]
    x0 = rng.uniform(0.2, 2.0, 6) * (rng.choice([-1, 1], 6) if name in ("relu", "tanh", "exp", "softplus", "square") else 1)
    np.testing.assert_allclose(op(x0), ref(x0), rtol=1e-12)
    tape = Tape()
    x = tape.leaf(x0)
    (g,) = tape.grad(ad.reduce_sum(op(x)), [x])
    num = fd_grad(lambda v: float(np.sum(ref(v))), x0)
    assert np.max(np.abs(g - num) / np.maximum(1, np.abs(g))) < 1e-4


@pytest.mark.parametrize("op", [ad.add, ad.sub, ad.mul, ad.div])
def test_binary_op_gradients(op, rng):
    a0, b0 = rng.standard_normal((3, 2)), rng.uniform(0.5, 2, (3, 2))

    def f(a, b):
        return float(np.sum(ad.value(op(a, b)) ** 2))

    tape = Tape()
    a, b = tape.leaf(a0), tape.leaf(b0)
    ga, gb = tape.grad(ad.reduce_sum(ad.square(op(a, b))), [a, b])
    np.testing.assert_allclose(ga, fd_grad(lambda v: f(v, b0), a0), rtol=1e-5, atol=1e-6)
    np.testing.assert_allclose(gb, fd_grad(lambda v: f(a0, v), b0), rtol=1e-5, atol=1e-6)


# --------------------------------------------------------------- reductions


def test_reduce_sum_examples():
    assert ad.reduce_sum(np.zeros(5)) == 0.0
    np.testing.assert_array_equal(ad.reduce_sum(np.array([[1.0, 2], [3, 4]]), axis=0), [4, 6])


def test_reduce_sum_invalid_axis():
    with pytest.raises(ValueError):
        ad.reduce_sum(np.ones((2, 2)), axis=2)


@given(arrays(np.float64, st.integers(1, 30), elements=finite), st.randoms(use_true_random=False))
def test_reduce_sum_permutation_and_determinism(x, r):
    perm = list(range(x.size))
    r.shuffle(perm)
    s1 = float(ad.reduce_sum(x))
    assert s1 == float(ad.reduce_sum(x.copy()))
    assert abs(s1 - float(ad.reduce_sum(x[perm]))) < 1e-12 * max(1.0, np.sum(np.abs(x)))


def test_segment_sum_matches_loop(rng):
    x = rng.standard_normal((10, 3))
    offsets = np.array([0, 3, 4, 10])
    out = ad.segment_sum(x, offsets)
    for k in range(3):
        np.testing.assert_allclose(out[k], x[offsets[k] : offsets[k + 1]].sum(0), rtol=1e-14)


def test_structural_op_gradients(rng):
    x0 = rng.standard_normal((6, 3))

    def build(x):
        a = ad.segment_sum(x, np.array([0, 2, 6]))
        b = ad.take(x, np.array([5, 0, 0]))
        c = ad.concat([a, b], axis=0)
        d = ad.transpose(ad.reshape(c, (3, 5)))
        e = ad.getitem(d, (slice(None), np.array([0, 2, 2])))
        return ad.reduce_sum(ad.square(e)) + ad.mean(ad.tanh(x))

    tape = Tape()
    x = tape.leaf(x0)
    (g,) = tape.grad(build(x), [x])
    np.testing.assert_allclose(g, fd_grad(lambda v: float(build(v)), x0), rtol=1e-6, atol=1e-8)


def test_eq_gram_and_add_diag_gradients(rng):
    f0, d0 = rng.standard_normal((4, 2)), rng.uniform(0.1, 1, 4)
    w = rng.standard_normal((4, 4))

    def build(f, d):
        return ad.reduce_sum(ad.mul(ad.add_diag(ad.eq_gram(f), d), w))

    tape = Tape()
    f, d = tape.leaf(f0), tape.leaf(d0)
    gf, gd = tape.grad(build(f, d), [f, d])
    np.testing.assert_allclose(gf, fd_grad(lambda v: float(build(v, d0)), f0), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(gd, fd_grad(lambda v: float(build(f0, v)), d0), rtol=1e-6, atol=1e-8)


def test_mvn_logpdf_gradients(rng):
    a = rng.standard_normal((4, 4))
    cov0 = a @ a.T + np.eye(4)
    mu0, y0 = rng.standard_normal(4), rng.standard_normal(4)
    tape = Tape()
    mu, cov = tape.leaf(mu0), tape.leaf(cov0)
    gm, gc = tape.grad(ad.mvn_logpdf(y0, mu, cov), [mu, cov])
    np.testing.assert_allclose(gm, fd_grad(lambda v: float(ad.mvn_logpdf(y0, v, cov0)), mu0), rtol=1e-6)
    # symmetric perturbations: compare the directional derivative along a symmetric direction
    s = rng.standard_normal((4, 4))
    s = s + s.T
    h = 1e-5
    num = (float(ad.mvn_logpdf(y0, mu0, cov0 + h * s)) - float(ad.mvn_logpdf(y0, mu0, cov0 - h * s))) / (2 * h)
    assert abs(np.sum(gc * s) - num) < 1e-6


# ----------------------------------------------------------------- cholesky


def test_cholesky_identity_and_hand_case():
    np.testing.assert_array_equal(cholesky(np.eye(3), 0.0), np.eye(3))
    np.testing.assert_allclose(cholesky(np.array([[4.0, 2], [2, 3]]), 0.0), [[2, 0], [1, np.sqrt(2)]], rtol=1e-15)


def test_cholesky_reconstruction(rng):
    a = rng.standard_normal((20, 20))
    a = a @ a.T + 1e-3 * np.eye(20)
    chol, used = cholesky(a, return_jitter=True)
    err = np.linalg.norm(chol @ chol.T - (a + used * np.eye(20))) / np.linalg.norm(a)
    assert err < 1e-8


def test_cholesky_jitter_escalation_rescues_psd():
    v = np.array([1.0, 2.0, 3.0])
    chol, used = cholesky(np.outer(v, v), jitter=0.0, return_jitter=True)
    assert used > 0
    assert np.all(np.isfinite(chol))


def test_cholesky_error_carries_pivot():
    a = np.diag([1.0, 2.0, -5.0, 1.0])
    with pytest.raises(CholeskyError) as info:
        cholesky(a)
    assert info.value.pivot == 2
    assert info.value.jitter == pytest.approx(1e-4)


def test_cholesky_rejects_asymmetric():
    with pytest.raises(ValueError):
        cholesky(np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_tri_solve_examples(rng):
    b = rng.standard_normal(3)
    np.testing.assert_array_equal(tri_solve(np.eye(3), b), b)
    np.testing.assert_allclose(tri_solve(np.array([[2.0, 0], [1, 1]]), np.array([2.0, 2])), [1, 1])
    l = np.tril(rng.standard_normal((10, 10))) + 5 * np.eye(10)
    b = rng.standard_normal(10)
    assert np.max(np.abs(l @ tri_solve(l, b) - b)) < 1e-10
    assert np.max(np.abs(l.T @ tri_solve(l, b, transpose=True) - b)) < 1e-10


def test_tri_solve_zero_diagonal():
    with pytest.raises(ValueError):
        tri_solve(np.array([[1.0, 0], [1, 0]]), np.ones(2))


def test_cho_solve_and_logdet(rng):
    a = rng.standard_normal((6, 6))
    a = a @ a.T + np.eye(6)
    chol = cholesky(a, 0.0)
    b = rng.standard_normal(6)
    np.testing.assert_allclose(cho_solve(chol, b), np.linalg.solve(a, b), rtol=1e-10)
    assert logdet_from_chol(chol) == pytest.approx(np.linalg.slogdet(a)[1], rel=1e-12)


# --------------------------------------------------------------------- adam


def test_adam_zero_grad_is_identity():
    p = {"w": np.array([1.0, -2.0])}
    st_ = AdamState.for_params(p)
    out = adam_step(p, {"w": np.zeros(2)}, st_)
    np.testing.assert_array_equal(out["w"], p["w"])
    assert st_.step == 1


def test_adam_first_step_hand_case():
    p = {"w": np.array([0.0])}
    out = adam_step(p, {"w": np.array([1.0])}, AdamState.for_params(p, lr=3e-4))
    assert abs(out["w"][0] + 3e-4) < 1e-7


def test_adam_descends_quadratic():
    p = {"t": np.array([1.0])}
    st_ = AdamState.for_params(p, lr=0.1)
    for _ in range(2):
        p = adam_step(p, {"t": p["t"].copy()}, st_)
    assert 0.5 * p["t"][0] ** 2 < 0.5


def test_adam_matches_reference_formula(rng):
    p = {"w": rng.standard_normal(4)}
    st_ = AdamState.for_params(p, lr=1e-2)
    m = v = np.zeros(4)
    w = p["w"].copy()
    for t in range(1, 6):
        g = rng.standard_normal(4)
        p = adam_step(p, {"w": g}, st_)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w = w - 1e-2 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    np.testing.assert_allclose(p["w"], w, rtol=1e-12)


def test_adam_rejects_nonfinite_gradient():
    p = {"enc.0.w": np.zeros(2)}
    with pytest.raises(FloatingPointError, match="enc.0.w"):
        adam_step(p, {"enc.0.w": np.array([0.0, np.nan])}, AdamState.for_params(p))


# --------------------------------------------------------------- grad_check


def test_grad_check_quadratic(rng):
    r = grad_check(lambda x: ad.mul(ad.reduce_sum(ad.square(x)), 0.5), rng.standard_normal(7))
    assert r.max_error < 1e-8 and r.checked == 7


def test_grad_check_relu_away_from_kinks(rng):
    x = rng.uniform(0.5, 2, 8) * rng.choice([-1, 1], 8)
    assert grad_check(lambda v: ad.reduce_sum(ad.relu(v)), x).max_error < 1e-6


def test_grad_check_skips_kink_crossings():
    r = grad_check(lambda v: ad.reduce_sum(ad.relu(v)), np.array([1e-7, 1.0]))
    assert r.skipped == 1 and r.checked == 1


def test_grad_check_detects_wrong_gradient():
    def bad_square(x):
        out = ad.square(x)
        tape = x.tape
        tape.vjps[out.index] = lambda g: [g * 3.0 * ad.value(x)]
        return ad.reduce_sum(out)

    assert grad_check(bad_square, np.array([1.0, 2.0])).max_error > 0.1
