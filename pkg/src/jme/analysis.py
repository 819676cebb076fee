"""Closed-form expected errors, PP bounds, Pareto sweeps and Monte-Carlo summaries.

Errors are expected squared Frobenius norms over the whole horizon,
``E ||Y - Ŷ||_F^2`` and ``E ||S - Ŝ||_F^2``. For every method except PP they
do not depend on the data. PP's second-moment error does, through a term that
is linear in ``X X^T``; :func:`pp_error_exact` evaluates it for a given ``X``
and :func:`pp_error_formula` reports the worst case over ``X`` (exact for
identity shaping, an interval otherwise).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .calibration import PrivacyParams
from .mechanisms import noise_scales
from .methods import DEFAULT_ALPHA, DEFAULT_TAU, Method
from .sensitivity import c_d
from .workload import NoiseShaping


def _shaping(C, n: int) -> NoiseShaping:
    if C is None:
        return NoiseShaping.identity(n)
    return C if isinstance(C, NoiseShaping) else NoiseShaping(C)


def _q(d: int, form: str) -> int:
    return d * d if form == "full" else d


def harmonic(n: int, m: int) -> float:
    """H_{n,m} = sum_{k=1}^n k^{-m}."""
    if n < 1 or m < 1:
        raise ValueError("harmonic(n, m) needs n >= 1 and m >= 1")
    k = np.arange(1, n + 1, dtype=np.float64)
    return float(np.sum(k ** (-float(m))))


def residual_sq(A, C: NoiseShaping) -> float:
    return float(np.sum(C.residual_matrix(A) ** 2))


def noise_error(A, C: NoiseShaping, std: float, width: int) -> float:
    """E ||A (std C^{-1} Z)||_F^2 for Z with ``width`` i.i.d. N(0,1) columns."""
    return std**2 * width * residual_sq(A, C)


def jme_error_formulas(A1, C1, A2, C2, zeta: float, sigma: float, d: int,
                       lam: float | None = None, form: str = "full"):
    """(first, second) for JME, or lambda-JME when ``lam`` is given."""
    n = np.asarray(A1).shape[0]
    C1, C2 = _shaping(C1, n), _shaping(C2, n)
    method = Method.JME if lam is None else Method.LAMBDA_JME
    sc = noise_scales(method, C1, C2, PrivacyParams(sigma, zeta), d, lam=lam)
    return noise_error(A1, C1, sc.first, d), noise_error(A2, C2, sc.second, _q(d, form))


def pp_noise_terms(A2, C1: NoiseShaping, noise_std: float, d: int, form: str = "full"):
    """Pieces of the PP second-moment error for noise variance ``v = noise_std^2``.

    Returns ``(quad, lin_weight, bias_sq)`` so that for data ``X``

        error = quad + lin_weight * tr((A2^T A2 o Q) X X^T) [+ bias_sq if not debiased]

    with ``Q = C1^{-1} C1^{-T}``.
    """
    A2 = np.asarray(A2, dtype=np.float64)
    v = noise_std**2
    Q = C1.inverse_gram()
    G = A2.T @ A2
    gq = float(np.sum(G * Q * Q))
    bias = A2 @ np.diag(Q)
    if form == "full":
        quad, lin = d * (d + 1) * v**2 * gq, 2.0 * (d + 1) * v
    else:
        quad, lin = 2.0 * d * v**2 * gq, 4.0 * v
    return quad, lin, d * v**2 * float(bias @ bias)


def pp_error_exact(A2, C1, zeta: float, sigma: float, X, *, debiased: bool,
                   form: str = "full") -> float:
    """Expected PP second-moment error on the specific data ``X``."""
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    C1 = _shaping(C1, n)
    std = sigma * 2.0 * zeta * C1.norm_1to2
    quad, lin, bias_sq = pp_noise_terms(A2, C1, std, d, form)
    A2 = np.asarray(A2, dtype=np.float64)
    W = (A2.T @ A2) * C1.inverse_gram()
    err = quad + lin * float(np.sum(W * (X @ X.T)))
    return err if debiased else err + bias_sq


def pp_sup_bounds(A2, C1: NoiseShaping) -> tuple[float, float]:
    """Bounds on sup over unit-norm rows of tr((A2^T A2 o Q) X X^T).

    The lower bound ``||A2 C1^{-1}||_F^2`` is attained by identical rows.
    """
    A2 = np.asarray(A2, dtype=np.float64)
    W = (A2.T @ A2) * C1.inverse_gram()
    return residual_sq(A2, C1), float(np.sum(np.abs(W)))


def pp_error_formula(A2, C1, zeta: float, sigma: float, d: int, *, debiased: bool,
                     form: str = "full"):
    """Worst-case PP second-moment error: a float for identity C1, else (lower, upper)."""
    n = np.asarray(A2).shape[0]
    C1 = _shaping(C1, n)
    std = sigma * 2.0 * zeta * C1.norm_1to2
    quad, lin, bias_sq = pp_noise_terms(A2, C1, std, d, form)
    lo, hi = pp_sup_bounds(A2, C1)
    extra = 0.0 if debiased else bias_sq
    lower = quad + lin * zeta**2 * lo + extra
    upper = quad + lin * zeta**2 * hi + extra
    if C1.is_identity:
        return lower
    return lower, upper


@dataclass
class ErrorReport:
    method: str
    first: float
    second: float | tuple[float, float]
    mc_first: tuple[float, float] | None = None   # (mean, stderr)
    mc_second: tuple[float, float] | None = None
    trials: int = 0

    @property
    def second_interval(self) -> tuple[float, float]:
        if isinstance(self.second, tuple):
            return self.second
        return self.second, self.second


def error_formulas(method, A1, C1, A2, C2, zeta: float, sigma: float, d: int, *,
                   lam: float | None = None, alpha: float = DEFAULT_ALPHA,
                   tau: float = DEFAULT_TAU, form: str = "full", X=None) -> ErrorReport:
    """Closed-form (first, second) errors of any method.

    For PP, passing ``X`` gives the exact error on that data instead of the
    worst case.
    """
    method = Method(method)
    n = np.asarray(A1).shape[0]
    C1, C2 = _shaping(C1, n), _shaping(C2, n)
    sc = noise_scales(method, C1, C2, PrivacyParams(sigma, zeta), d, lam=lam, alpha=alpha, tau=tau)
    first = noise_error(A1, C1, sc.first, d)
    if method.is_pp:
        debiased = method is Method.PP_DEBIASED
        if X is None:
            second = pp_error_formula(A2, C1, zeta, sigma, d, debiased=debiased, form=form)
        else:
            second = pp_error_exact(A2, C1, zeta, sigma, X, debiased=debiased, form=form)
    else:
        C_second = C1 if method is Method.CS else C2
        second = noise_error(A2, C_second, sc.second, _q(d, form))
    return ErrorReport(method.value, first, second)


def mc_summary(samples) -> tuple[float, float]:
    """(mean, standard error) of per-trial values."""
    samples = np.asarray(samples, dtype=np.float64)
    n = samples.size
    if n < 2:
        return float(samples.mean()), math.inf
    return float(samples.mean()), float(samples.std(ddof=1) / math.sqrt(n))


def within(value: float, target, se: float, k: float = 4.0) -> bool:
    """``value`` lies within ``k`` standard errors of ``target`` (a float or interval)."""
    lo, hi = target if isinstance(target, tuple) else (target, target)
    return lo - k * se <= value <= hi + k * se


# --- Pareto sweeps ------------------------------------------------------------


@dataclass
class ParetoCurve:
    method: str
    params: np.ndarray
    points: np.ndarray  # (len(params), 2): first, second
    dominated: np.ndarray = field(default=None)


@dataclass(frozen=True)
class ParetoSetting:
    d: int = 10
    n: int = 100
    zeta: float = 1.0
    sigma: float = 0.5
    A: np.ndarray | None = None
    C: NoiseShaping | None = None

    def matrices(self):
        A = self.A if self.A is not None else np.tril(np.ones((self.n, self.n)))
        C = self.C if self.C is not None else NoiseShaping.identity(self.n)
        return A, C


def pareto_sweep(setting: ParetoSetting, param_grids: dict) -> list[ParetoCurve]:
    """Closed-form (first, second) points for each method over its parameter grid.

    ``param_grids`` maps method names to grids: ``lambda-jme`` takes lambdas,
    ``ime`` alphas and ``cs`` taus. ``jme`` and PP variants take no parameter
    (pass any one-element grid, e.g. ``[nan]``).
    """
    A, C = setting.matrices()
    curves = []
    for name, grid in param_grids.items():
        method = Method(name)
        grid = np.asarray(grid, dtype=np.float64)
        pts = np.empty((grid.size, 2))
        for i, p in enumerate(grid):
            kw = {}
            if method is Method.LAMBDA_JME:
                kw["lam"] = float(p)
            elif method is Method.IME:
                kw["alpha"] = float(p)
            elif method is Method.CS:
                kw["tau"] = float(p)
            rep = error_formulas(method, A, C, A, C, setting.zeta, setting.sigma, setting.d, **kw)
            second = rep.second_interval[1]
            pts[i] = rep.first, second
        curves.append(ParetoCurve(method.value, grid, pts))
    return curves


def dominated_by(points: np.ndarray, frontier: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    """For each row of ``points``, whether some frontier point is <= in both coordinates."""
    points = np.asarray(points, dtype=np.float64)
    frontier = np.asarray(frontier, dtype=np.float64)
    le = frontier[None, :, :] <= points[:, None, :] * (1.0 + rtol)
    return np.any(np.all(le, axis=2), axis=1)


def check_dominance(curves: list[ParetoCurve], reference: str = "lambda-jme") -> dict:
    """Mark every non-reference point by whether the reference curve dominates it."""
    ref = next(c for c in curves if c.method == reference)
    out = {}
    for c in curves:
        c.dominated = dominated_by(c.points, ref.points) if c.method != reference else \
            np.zeros(len(c.params), dtype=bool)
        if c.method != reference:
            out[c.method] = bool(np.all(c.dominated))
    return out


# --- Adam second-moment errors ------------------------------------------------


def adam_error_formulas(A2, sigma: float, d: int, method, X=None) -> float:
    """Expected ||D - D̂||^2 of the diagonal second moment, trivial shaping, zeta = 1.

    ``sigma`` is the application-level noise stddev on each gradient
    coordinate, so PP's noise variance is ``sigma^2``. For JME the second
    stream has variance ``c_d sigma^2`` (lambda* scaling). PP values assume
    unit-norm gradient rows; pass ``X`` to use the given rows instead.
    """
    method = Method(method)
    A2 = np.asarray(A2, dtype=np.float64)
    fro = float(np.sum(A2**2))
    if method in (Method.JME, Method.LAMBDA_JME):
        return c_d(d) * d * sigma**2 * fro
    if not method.is_pp:
        raise ValueError(f"no Adam error formula for {method.value}")
    if X is None:
        lin = fro
    else:
        X = np.asarray(X, dtype=np.float64)
        lin = float(np.sum((A2**2) @ np.sum(X**2, axis=1)))
    err = 2.0 * d * sigma**4 * fro + 4.0 * sigma**2 * lin
    if method is Method.PP:
        rs = A2.sum(axis=1)
        err += d * sigma**4 * float(rs @ rs)
    return err


def adam_crossover_sigma_sq(d: int) -> float:
    """sigma^2 above which JME beats debiased PP in the diagonal setting (d >= 2)."""
    if d < 2:
        raise ValueError("crossover formula holds for d >= 2")
    return 1.0 - 2.0 / d


def pp_jme_gap(sigma, d: int):
    """Debiased-PP minus JME second-moment error per unit ||A2||_F^2 (identity C, zeta=1)."""
    sigma = np.asarray(sigma, dtype=np.float64)
    pp = 16.0 * d * (d + 1) * sigma**4 + 8.0 * (d + 1) * sigma**2
    return pp - 4.0 * c_d(d) * d * d * sigma**2


def pp_jme_crossover(d: int) -> float:
    """sigma where debiased PP and JME second-moment errors coincide (identity C, zeta=1)."""
    val = (4.0 * c_d(d) * d * d - 8.0 * (d + 1)) / (16.0 * d * (d + 1))
    if val <= 0:
        return 0.0
    return math.sqrt(val)
