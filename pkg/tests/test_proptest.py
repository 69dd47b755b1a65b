import numpy as np

from rcnp import proptest

SMALL = dict(width=16, d_emb=16, enc_hidden=1, dec_hidden=2, d_sigma=4)


def test_equivariance_suite_small():
    results = proptest.equivariance_suite(trials=2, tasks_per_init=5, seed=3, **SMALL)
    names = [r.name for r in results]
    assert len(results) == 5 and names[-1].startswith("control")
    for r in results:
        assert r.ok, r.line()
    assert all(r.worst < proptest.EQUIVARIANCE_TOL for r in results[:4])


def test_negated_control_fails():
    results = proptest.equivariance_suite(trials=2, tasks_per_init=5, dims=(1,), seed=3, negate_control=True, **SMALL)
    control = results[-1]
    assert not control.ok and control.line().startswith("FAIL")


def test_gradient_suite_small():
    results = proptest.gradient_suite(tasks_per_variant=2, seed=4, n_coords=10, **SMALL)
    assert len(results) == 6
    for r in results:
        assert r.ok, r.line()


def test_random_rotation_and_shift(rng):
    for d in (1, 2, 3):
        q = proptest.random_rotation(d, rng)
        assert np.allclose(q.T @ q, np.eye(d), atol=1e-12) and np.linalg.det(q) > 0
        assert np.linalg.norm(proptest.random_shift(d, rng)) <= 10


def test_result_line():
    r = proptest.PropertyResult("x", passed=3, skipped=1, worst=2e-7)
    assert r.ok and r.line() == "PASS x: passed=3 failed=0 skipped=1 worst=2e-07"
    assert not proptest.PropertyResult("y").ok
