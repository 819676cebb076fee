import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize
from scipy.stats import multivariate_normal

from jme.analysis import harmonic
from jme.applications.density import (
    covariance_error_exact,
    covariance_error_formulas,
    data_generator,
    density_bias_correction,
    density_run,
    gaussian_density_stream,
    gaussian_kl,
    gaussian_kl_batch,
    make_density_problem,
    psd_project,
    raw_covariances,
    running_covariance,
    sample_wishart,
)
from jme.sensitivity import c_d


def sym_matrices(d):
    return st.lists(st.floats(-5, 5), min_size=d * d, max_size=d * d).map(
        lambda v: (lambda M: M + M.T)(np.array(v).reshape(d, d)))


def test_psd_project_examples():
    np.testing.assert_allclose(psd_project(np.diag([1.0, -2.0])), np.diag([1.0, 0.0]), atol=1e-15)
    S = np.array([[2.0, 0.5], [0.5, 1.0]])
    np.testing.assert_allclose(psd_project(S), S, atol=1e-14)
    assert np.linalg.eigvalsh(psd_project(np.diag([1.0, -2.0]), 1e-3)).min() == pytest.approx(1e-3)
    with pytest.raises(ValueError):
        psd_project(np.array([[1.0, 2.0], [0.0, 1.0]]))


@settings(max_examples=50, deadline=None)
@given(sym_matrices(3))
def test_psd_project_idempotent(M):
    P = psd_project(M, 1e-8)
    np.testing.assert_allclose(psd_project(P, 1e-8), P, atol=1e-9)
    assert np.linalg.eigvalsh(P).min() >= 1e-8 - 1e-9


def test_psd_project_against_optimizer():
    M = np.array([[0.3, 1.2], [1.2, -0.7]])
    P = psd_project(M)

    def obj(p):
        L = np.array([[p[0], 0.0], [p[1], p[2]]])
        return np.sum((L @ L.T - M) ** 2)

    best = min((minimize(obj, x0, method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-14,
                                                                  "maxiter": 5000})
                for x0 in ([1, 0, 1], [0.5, 0.5, 0.1], [1, 1, 0])), key=lambda r: r.fun)
    assert np.sum((P - M) ** 2) <= best.fun + 1e-8


def test_kl_examples():
    S = np.array([[1.0, 0.3], [0.3, 2.0]])
    assert gaussian_kl([0, 0], S, [0, 0], S) == pytest.approx(0.0, abs=1e-12)
    assert gaussian_kl([0.0], [[1.0]], [1.0], [[1.0]]) == pytest.approx(0.5)


def test_kl_against_numerical_integration():
    mu1, S1 = np.array([0.2, -0.1]), np.array([[1.0, 0.4], [0.4, 0.8]])
    mu2, S2 = np.array([-0.3, 0.4]), np.array([[1.5, -0.2], [-0.2, 0.7]])
    g = np.linspace(-8, 8, 801)
    XX, YY = np.meshgrid(g, g, indexing="ij")
    pts = np.stack([XX, YY], axis=-1)
    lp = multivariate_normal(mu1, S1).logpdf(pts)
    lq = multivariate_normal(mu2, S2).logpdf(pts)
    h = g[1] - g[0]
    oracle = float(np.sum(np.exp(lp) * (lp - lq)) * h * h)
    assert gaussian_kl(mu1, S1, mu2, S2) == pytest.approx(oracle, abs=1e-3)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_kl_nonnegative_and_batch(seed):
    gen = np.random.default_rng(seed)
    d = 3
    A, B = gen.normal(size=(d, d)), gen.normal(size=(d, d))
    S1, S2 = A @ A.T + 0.1 * np.eye(d), B @ B.T + 0.1 * np.eye(d)
    mu1, mu2 = gen.normal(size=d), gen.normal(size=d)
    kl = gaussian_kl(mu1, S1, mu2, S2)
    assert kl >= 0
    assert gaussian_kl_batch(mu1[None], S1[None], mu2[None], S2[None])[0] == pytest.approx(kl, rel=1e-8, abs=1e-10)
    assert gaussian_kl(mu1, S1, mu1, S1) == pytest.approx(0.0, abs=1e-9)


def test_wishart_mean():
    gen = np.random.default_rng(0)
    draws = np.array([sample_wishart(0.5 * np.eye(3), 6, gen) for _ in range(20_000)])
    np.testing.assert_allclose(draws.mean(axis=0), 3.0 * np.eye(3), atol=0.06)
    with pytest.raises(ValueError):
        sample_wishart(np.eye(3), 2, gen)


def test_problem_normalization():
    prob = make_density_problem(5, 200, data_generator(0, 1))
    assert np.all(np.linalg.norm(prob.X, axis=1) <= 1.0 + 1e-12)
    assert prob.clipped < 10
    np.testing.assert_allclose(prob.cov, prob.cov.T)


def test_zero_sigma_is_exact_covariance():
    X = np.random.default_rng(1).uniform(-0.5, 0.5, size=(8, 2))
    mu, cov = running_covariance(X)
    for method in ("jme", "jme-debiased", "pp", "pp-debiased"):
        out = gaussian_density_stream(method, X, 0.0)
        for t, est in enumerate(out):
            np.testing.assert_allclose(est.mu_hat, mu[t], atol=1e-14)
            np.testing.assert_allclose(est.raw, cov[t], atol=1e-14)
    np.testing.assert_allclose(cov[-1], np.cov(X.T, bias=True), atol=1e-14)


def test_bias_corrections():
    assert density_bias_correction("jme-debiased", 2.0, 4)[3] == pytest.approx(-1.0)
    np.testing.assert_allclose(density_bias_correction("pp-debiased", 2.0, 2), [0.0, 2.0])
    np.testing.assert_array_equal(density_bias_correction("jme", 2.0, 3), 0.0)


def test_unknown_method_and_norms():
    with pytest.raises(ValueError):
        raw_covariances("ime", np.zeros((3, 2)), 1.0, 0)
    with pytest.raises(ValueError):
        gaussian_density_stream("jme", [[2.0, 0.0]], 1.0)


def test_outputs_are_psd_and_symmetric():
    X = make_density_problem(3, 30, data_generator(2, 0)).X
    for est in gaussian_density_stream("pp-debiased", X, 2.0, seed=4):
        assert np.allclose(est.sigma_hat, est.sigma_hat.T, atol=1e-9)
        assert np.linalg.eigvalsh(est.sigma_hat).min() >= 1e-8 - 1e-12


@pytest.mark.parametrize("method", ["jme-debiased", "pp-debiased"])
def test_debiased_covariance_unbiased(method):
    n, d, trials = 20, 2, 100_000
    X = make_density_problem(d, n, data_generator(5, 0)).X
    _, truth = running_covariance(X)
    errs = []
    for start in range(0, trials, 25_000):
        _, cov = raw_covariances(method, X, 0.7, seed=13, trial_start=start, n_trials=25_000)
        errs.append(cov - truth[None])
    errs = np.concatenate(errs)
    mean = errs.mean(axis=0)
    se = errs.std(axis=0, ddof=1) / math.sqrt(trials)
    assert np.all(np.abs(mean) <= 4 * se)


def test_error_formula_examples():
    for d in (1, 3):
        assert covariance_error_formulas(1, d, 0.7, "jme-debiased") == pytest.approx(
            (c_d(d) * d * d + 2 * d + 2) * 0.49 + d * (d + 1) * 0.7**4)
    assert 2 * 256 * harmonic(1000, 2) == pytest.approx(841.7, abs=0.1)
    assert 2 * 256 * (harmonic(1000, 1) - harmonic(1000, 2)) == pytest.approx(2990.6, abs=0.5)
    jme = covariance_error_formulas(1000, 1, 4.0, "jme-debiased")
    lo, hi = covariance_error_formulas(1000, 1, 4.0, "pp-debiased")
    assert jme < lo <= hi
    assert covariance_error_formulas(10, 2, 0.0, "jme-debiased") == 0.0
    with pytest.raises(ValueError):
        covariance_error_formulas(10, 2, 1.0, "pp")


def test_exact_error_attains_formula():
    n, sigma = 50, 1.5
    same = np.ones((n, 1))
    alt = np.array([[(-1.0) ** k] for k in range(n)])
    assert covariance_error_exact(same, sigma, "jme-debiased") == pytest.approx(
        covariance_error_formulas(n, 1, sigma, "jme-debiased"))
    lo, hi = covariance_error_formulas(n, 1, sigma, "pp-debiased")
    assert lo - 1e-9 <= covariance_error_exact(alt, sigma, "pp-debiased") <= hi + 1e-9


def test_density_run_shapes_and_determinism():
    a = density_run("jme-debiased", 3, 25, 2.0, seed=1, run=3)
    b = density_run("jme-debiased", 3, 25, 2.0, seed=1, run=3)
    assert a.kl.shape == (25,) and np.all(a.kl >= 0)
    np.testing.assert_array_equal(a.kl, b.kl)
