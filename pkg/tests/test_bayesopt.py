import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, optimize, stats

from rcnp import bayesopt, gpref, models
from rcnp.bayesopt import GPSurrogate, NPSurrogate, RandomSurrogate
from rcnp.models import ModelSpec


@pytest.mark.parametrize("name", ["hartmann3", "hartmann6"])
def test_hartmann_minimum(name):
    # Independent search: dense random sampling, then bounded quasi-Newton from the best points.
    box = bayesopt.blackbox(name)
    rng = np.random.default_rng(0)
    pts = rng.uniform(0, 1, (200_000, box.dim))
    vals = box(pts)
    assert np.all(np.isfinite(vals[:10_000]))
    best = np.inf
    for i in np.argsort(vals)[:10]:
        res = optimize.minimize(box, pts[i], method="L-BFGS-B", bounds=[(0, 1)] * box.dim)
        best = min(best, res.fun)
    assert abs(best - box.f_min) < 1e-5
    assert abs(box(np.array(box.x_min)) - box.f_min) < 1e-4
    assert np.all(vals >= box.f_min - 1e-5)


def test_blackbox_domain_errors():
    with pytest.raises(ValueError):
        bayesopt.hartmann("hartmann3", [0.5, 0.5])
    with pytest.raises(ValueError):
        bayesopt.hartmann("hartmann3", [0.5, 0.5, 1.5])
    with pytest.raises(ValueError):
        bayesopt.blackbox("branin")


def test_ei_examples():
    assert float(bayesopt.expected_improvement(1.0, 1.0, 1.0)) == pytest.approx(stats.norm.pdf(0), abs=1e-15)
    assert abs(float(stats.norm.pdf(0)) - 0.398942) < 1e-6
    assert float(bayesopt.expected_improvement(0.5, 0.0, 1.0)) == 0.0
    assert float(bayesopt.expected_improvement(1.5, 0.0, 1.0)) == 0.5
    with pytest.raises(ValueError):
        bayesopt.expected_improvement(0.0, -1.0, 0.0)


def test_ei_matches_quadrature():
    mu, sd, fb = 0.3, 0.7, 0.5
    ref, _ = integrate.quad(lambda f: max(f - fb, 0) * stats.norm.pdf(f, mu, sd), -10, 10)
    assert float(bayesopt.expected_improvement(mu, sd, fb)) == pytest.approx(ref, abs=1e-9)


@given(st.floats(-5, 5), st.floats(0, 5), st.floats(-5, 5))
def test_ei_nonnegative(mu, sd, fb):
    assert float(bayesopt.expected_improvement(mu, sd, fb)) >= 0


def test_ei_monotone_in_sigma():
    sig = np.linspace(0.1, 5, 200)
    for mu in (-1.0, -0.5, 0.0):
        assert np.all(np.diff(bayesopt.expected_improvement(np.full_like(sig, mu), sig, 0.5)) > 0)


class Spike:
    """Surrogate whose acquisition is sharply peaked at ``x0``."""

    random = False

    def __init__(self, x0):
        self.x0 = np.asarray(x0)

    def condition(self, x, y):
        def predict(xc):
            r2 = np.sum((np.atleast_2d(xc) - self.x0) ** 2, axis=1)
            return -5.0 * np.exp(-r2 / (2 * 0.1**2)), np.full(len(r2), 0.1)

        return predict


@pytest.mark.parametrize("x0", [[0.3, 0.8], [0.7, 0.2, 0.45]])
def test_proposal_finds_constructed_peak(x0):
    d = len(x0)
    rng = np.random.default_rng(1)
    x, y = rng.uniform(0, 1, (5, d)), rng.standard_normal(5)
    p = bayesopt.propose(Spike(x0), x, y, np.random.default_rng(2))
    assert np.linalg.norm(p - x0) < 0.05
    q = bayesopt.propose(Spike(x0), x, y, np.random.default_rng(2))
    assert np.array_equal(p, q)


def test_proposal_in_domain_for_edge_peak():
    rng = np.random.default_rng(3)
    p = bayesopt.propose(Spike([1.2, -0.1]), rng.uniform(0, 1, (3, 2)), rng.standard_normal(3), rng)
    assert np.all((p >= 0) & (p <= 1))


def test_gp_fit_recovers_lengthscale():
    grid = bayesopt.GP_LENGTHSCALES
    hits = 0
    for trial in range(10):
        rng = np.random.default_rng(100 + trial)
        ell, theta = grid[8], bayesopt.GP_SCALES[4]
        x = rng.uniform(0, 1, (40, 2))
        y = gpref.sample_prior(gpref.matern52(ell, theta), x, 1e-4, rng)
        fit = bayesopt.gp_surrogate_fit(x, y)
        hits += abs(np.searchsorted(grid, fit.kernel.lengthscale - 1e-12) - 8) <= 1
    assert hits >= 8


def test_gp_fit_is_grid_argmax():
    rng = np.random.default_rng(4)
    x = rng.uniform(0, 1, (8, 1))
    y = np.sin(6 * x[:, 0])
    fit = bayesopt.gp_surrogate_fit(x, y)
    for ell in bayesopt.GP_LENGTHSCALES[::3]:
        for theta in bayesopt.GP_SCALES[::3]:
            for noise in bayesopt.GP_NOISES:
                lml = gpref.log_marginal_likelihood(gpref.matern52(ell, theta), x, y, noise, jitter=0.0)
                assert fit.lml >= lml - 1e-8


def test_gp_fit_degenerate_inputs():
    x = np.random.default_rng(5).uniform(0, 1, (6, 3))
    assert np.isfinite(bayesopt.gp_surrogate_fit(x, np.zeros(6)).lml)
    with pytest.raises(ValueError):
        bayesopt.gp_surrogate_fit(x[:1], np.zeros(1))


def test_steps_zero_and_trace_invariants(tmp_path):
    box = bayesopt.blackbox("hartmann3")
    tr = bayesopt.bo_run(RandomSurrogate(), box, steps=0)
    assert len(tr) == 5
    tr = bayesopt.bo_run(RandomSurrogate(), box, steps=20, seed=1)
    assert len(tr) == 25
    assert np.all(np.diff(tr.best) <= 0)
    assert np.array_equal(tr.error, np.abs(tr.best - box.f_min))
    path = tmp_path / "t.csv"
    tr.write_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["step", "x", "y", "best", "error"] and len(rows) == 26
    assert len(rows[3][1].split(",")) == 3 and float(rows[-1][4]) == tr.final_error


def test_init_design_shared_between_surrogates():
    box = bayesopt.blackbox("hartmann3")
    a = bayesopt.bo_run(RandomSurrogate(), box, steps=1, seed=2, restart=3)
    b = bayesopt.bo_run(GPSurrogate(), box, steps=1, seed=2, restart=3)
    assert all(np.array_equal(p, q) for p, q in zip(a.xs[:5], b.xs[:5]))
    assert not np.array_equal(a.xs[5], b.xs[5])


def test_np_surrogate_never_mutates_weights():
    spec = ModelSpec("RGNP", d_x=3, width=16, d_emb=16, enc_hidden=1, dec_hidden=1)
    params = models.init(spec, 0)
    before = {k: v.copy() for k, v in params.items()}
    sur = NPSurrogate(spec, params)
    bayesopt.bo_run(sur, bayesopt.blackbox("hartmann3"), steps=3)
    assert bayesopt.params_digest(params) == sur.digest
    assert models.params_equal(params, before)
    with pytest.raises(ValueError):
        bayesopt.bo_run(sur, bayesopt.blackbox("hartmann6"), steps=1)


def test_np_surrogate_box_mapping():
    spec = ModelSpec("RCNP", d_x=1, width=8, d_emb=8, enc_hidden=1, dec_hidden=1)
    params = models.init(spec, 0)
    # a relational model only sees differences, so mapping [0,1] onto a shifted box of equal width changes nothing
    a = NPSurrogate(spec, params, box=(0, 1)).condition([[0.2], [0.6]], [1.0, 2.0])(np.array([[0.4]]))
    b = NPSurrogate(spec, params, box=(3, 4)).condition([[0.2], [0.6]], [1.0, 2.0])(np.array([[0.4]]))
    assert np.allclose(a, b, atol=1e-9)


def test_pretrain_config():
    cfg = bayesopt.pretrain_task_config(3)
    assert cfg.family == "regime" and cfg.regime == "iv" and cfg.int_range == (0.0, 1.0)
    assert cfg.noise == bayesopt.PRETRAIN_NOISE and cfg.context_range == (1, 90)
