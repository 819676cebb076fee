import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jme.analysis import (
    ParetoSetting,
    adam_crossover_sigma_sq,
    adam_error_formulas,
    check_dominance,
    pp_jme_crossover,
    pp_jme_gap,
    dominated_by,
    error_formulas,
    harmonic,
    jme_error_formulas,
    mc_summary,
    pareto_sweep,
    pp_error_exact,
    pp_error_formula,
    pp_sup_bounds,
    within,
)
from jme.calibration import PrivacyParams
from jme.mechanisms import MechanismConfig, simulate
from jme.sensitivity import c_d
from jme.workload import Factorization, NoiseShaping, WorkloadKind, build_noise_shaping, build_workload

P3 = build_workload(WorkloadKind.prefix(), 3)
I3 = NoiseShaping.identity(3)


def test_harmonic():
    assert harmonic(3, 1) == pytest.approx(11 / 6)
    assert harmonic(1000, 2) == pytest.approx(1.64393, abs=1e-5)
    assert harmonic(1000, 1) == pytest.approx(7.48547, abs=1e-5)
    with pytest.raises(ValueError):
        harmonic(0, 1)


def test_jme_example():
    first, second = jme_error_formulas(P3, I3, P3, I3, 1.0, 1.0, 1)
    assert first == pytest.approx(4 * 6)
    assert second == pytest.approx(4 * c_d(1) * 6)
    assert second == pytest.approx(8.6563, abs=1e-4)


def test_pp_examples():
    rep = error_formulas("pp-debiased", P3, I3, P3, I3, 1.0, 1.0, 1)
    assert rep.second == pytest.approx(288.0)
    biased = error_formulas("pp", P3, I3, P3, I3, 1.0, 1.0, 1)
    assert biased.second == pytest.approx(288.0 + 224.0)


def test_zero_sigma_gives_zero():
    for m in ("jme", "ime", "cs", "pp", "pp-debiased"):
        rep = error_formulas(m, P3, I3, P3, I3, 1.0, 0.0, 2)
        assert rep.first == 0.0 and rep.second_interval == (0.0, 0.0)


def test_pp_interval_and_identical_rows():
    n = 8
    A = build_workload(WorkloadKind.prefix(), n)
    C = build_noise_shaping(Factorization.SQRT, WorkloadKind.prefix(), n)
    lo, hi = pp_error_formula(A, C, 1.0, 0.5, 2, debiased=True)
    assert lo <= hi
    X = np.tile([0.6, 0.8], (n, 1))
    assert pp_error_exact(A, C, 1.0, 0.5, X, debiased=True) == pytest.approx(lo, rel=1e-12)
    b_lo, b_hi = pp_sup_bounds(A, C)
    assert b_lo <= b_hi


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_pp_exact_inside_interval(seed):
    n = 6
    A = build_workload(WorkloadKind.average(), n)
    C = build_noise_shaping(Factorization.SQRT, WorkloadKind.average(), n)
    X = np.random.default_rng(seed).normal(size=(n, 2))
    X /= np.maximum(np.linalg.norm(X, axis=1, keepdims=True), 1.0)
    lo, hi = pp_error_formula(A, C, 1.0, 0.7, 2, debiased=False)
    val = pp_error_exact(A, C, 1.0, 0.7, X, debiased=False)
    # the lower end is a sup over X, so individual inputs may fall below it
    assert val <= hi * (1 + 1e-12)


@pytest.mark.parametrize("method,kw", [("lambda-jme", {"lam": 0.3}), ("ime", {"alpha": 0.3}),
                                       ("cs", {"tau": 2.0})])
def test_parametrized_methods_against_mc(method, kw):
    n, d = 10, 2
    A = build_workload(WorkloadKind.prefix(), n)
    C = build_noise_shaping(Factorization.SQRT, WorkloadKind.prefix(), n)
    X = np.tile([1.0, 0.0], (n, 1))
    rep = error_formulas(method, A, C, A, C, 1.0, 0.4, d, **kw)
    cfg = MechanismConfig(method, A, A, C, C, PrivacyParams(0.4), d, seed=21, **kw)
    res = simulate(cfg, X, 20_000)
    m1, se1 = mc_summary(res.total_first)
    m2, se2 = mc_summary(res.total_second)
    assert within(m1, rep.first, se1) and within(m2, rep.second, se2)


def test_mc_summary_and_within():
    mean, se = mc_summary([1.0, 3.0])
    assert mean == 2.0 and se == pytest.approx(1.0)
    assert mc_summary([5.0])[1] == math.inf
    assert within(1.0, (0.5, 2.0), 0.0)
    assert not within(3.0, 1.0, 0.1)


def test_dominated_by():
    frontier = np.array([[1.0, 3.0], [2.0, 1.0]])
    pts = np.array([[2.0, 3.0], [0.5, 5.0], [2.0, 1.0]])
    np.testing.assert_array_equal(dominated_by(pts, frontier), [True, False, True])


def test_pareto_small_grid():
    setting = ParetoSetting(d=3, n=20)
    curves = pareto_sweep(setting, {"lambda-jme": np.logspace(-3, 3, 200),
                                    "ime": [0.2, 0.5, 0.8], "cs": [0.1, 1.0, 10.0]})
    assert check_dominance(curves) == {"ime": True, "cs": True}
    assert curves[1].dominated.shape == (3,)


def test_adam_examples():
    A = np.array([[1.0]])
    assert adam_error_formulas(A, 1.0, 2, "jme") == pytest.approx(4.0)
    assert adam_error_formulas(A, 1.0, 1, "pp-debiased") == pytest.approx(6.0)
    assert adam_error_formulas(A, 1.0, 1, "jme") == pytest.approx(c_d(1))
    assert adam_error_formulas(A, 0.0, 3, "pp") == 0.0
    assert adam_error_formulas(A, 1.0, 1, "pp") == pytest.approx(6.0 + 1.0)
    with pytest.raises(ValueError):
        adam_error_formulas(A, 1.0, 1, "ime")


def test_adam_crossover():
    assert adam_crossover_sigma_sq(2) == 0.0
    assert adam_crossover_sigma_sq(10) == pytest.approx(0.8)
    A = np.eye(1)
    for d in (2, 5, 10):
        for s in (1.0, 1.5, 3.0):
            assert adam_error_formulas(A, s, d, "jme") < adam_error_formulas(A, s, d, "pp-debiased")
    assert adam_error_formulas(A, 0.5, 10, "jme") > adam_error_formulas(A, 0.5, 10, "pp-debiased")


def test_gap_d1_ordering():
    sig = np.logspace(-3, 2, 200)
    assert np.all(pp_jme_gap(sig, 1) > 0)
    assert pp_jme_crossover(1) == 0.0


def test_gap_large_d_crossover():
    s = pp_jme_crossover(1000)
    assert abs(s - 1 / math.sqrt(2)) / (1 / math.sqrt(2)) < 0.1
    assert pp_jme_gap(0.9 * s, 1000) < 0 < pp_jme_gap(1.1 * s, 1000)


@pytest.mark.parametrize("method", ["pp", "pp-debiased"])
def test_pp_formula_scales_with_zeta(method):
    # the linear term carries zeta^4 overall; checked against MC at zeta != 1
    n, d, zeta = 10, 2, 2.5
    A = build_workload(WorkloadKind.prefix(), n)
    C = NoiseShaping.identity(n)
    X = np.tile([zeta, 0.0], (n, 1))
    rep = error_formulas(method, A, C, A, C, zeta, 0.3, d)
    res = simulate(MechanismConfig(method, A, A, C, C, PrivacyParams(0.3, zeta), d, seed=3), X, 20_000)
    mean, se = mc_summary(res.total_second)
    assert within(mean, rep.second, se)
