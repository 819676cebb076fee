"""Private running Gaussian density estimation.

At every step ``t`` the estimator releases a mean ``mu_t`` and a covariance
``Sigma_t = M_t - mu_t mu_t^T`` where ``M_t`` is the running mean of ``x x^T``.
Both running means use the average workload with trivial noise shaping and
clip norm 1. ``sigma`` is the application-level noise level, twice the
Gaussian-mechanism multiplier; it equals the stddev of the noise on each
coordinate of the first moment.

Raw covariance estimates are biased by the squared mean noise. The debiased
variants remove that bias in expectation, then every estimate is symmetrized
and projected onto ``{S : S >= floor * I}``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

from .. import rng
from ..analysis import harmonic
from ..calibration import PrivacyParams
from ..linalg import clip_rows
from ..mechanisms import MechanismConfig, simulate_estimates
from ..methods import Method
from ..sensitivity import c_d
from ..workload import NoiseShaping, WorkloadKind, build_workload

DENSITY_METHODS = ("jme", "jme-debiased", "pp", "pp-debiased")
PSD_FLOOR = 1e-8


@dataclass(frozen=True)
class GaussianEstimate:
    t: int
    mu_hat: np.ndarray
    sigma_hat: np.ndarray
    raw: np.ndarray


def psd_project(M, floor: float = 0.0) -> np.ndarray:
    """Nearest (Frobenius) matrix with eigenvalues >= ``floor``."""
    M = np.asarray(M, dtype=np.float64)
    if floor < 0:
        raise ValueError("floor must be non-negative")
    if not np.allclose(M, np.swapaxes(M, -1, -2), atol=1e-9, rtol=0):
        raise ValueError("psd_project expects a symmetric matrix")
    M = 0.5 * (M + np.swapaxes(M, -1, -2))
    w, V = np.linalg.eigh(M)
    w = np.maximum(w, floor)
    P = (V * w[..., None, :]) @ np.swapaxes(V, -1, -2)
    return 0.5 * (P + np.swapaxes(P, -1, -2))


def gaussian_kl(mu1, S1, mu2, S2) -> float:
    """KL(N(mu1, S1) || N(mu2, S2))."""
    mu1, mu2 = np.atleast_1d(np.asarray(mu1, float)), np.atleast_1d(np.asarray(mu2, float))
    S1, S2 = np.atleast_2d(np.asarray(S1, float)), np.atleast_2d(np.asarray(S2, float))
    d = mu1.size
    L2 = np.linalg.cholesky(S2)
    diff = np.linalg.solve(L2, mu2 - mu1)
    W = np.linalg.solve(L2, S1)
    trace = float(np.trace(np.linalg.solve(L2, W.T)))
    logdet2 = 2.0 * float(np.sum(np.log(np.diag(L2))))
    sign, logdet1 = np.linalg.slogdet(S1)
    if sign <= 0:
        raise np.linalg.LinAlgError("S1 must be positive definite")
    kl = 0.5 * (trace + float(diff @ diff) - d + logdet2 - logdet1)
    return max(kl, 0.0)


def gaussian_kl_batch(mu1, S1, mu2, S2) -> np.ndarray:
    """Vectorized KL over a leading batch axis (all inputs broadcast)."""
    mu1, mu2 = np.asarray(mu1, float), np.asarray(mu2, float)
    S1, S2 = np.asarray(S1, float), np.asarray(S2, float)
    d = mu1.shape[-1]
    L2 = np.linalg.cholesky(S2)
    S2_inv = np.linalg.inv(S2)
    diff = mu2 - mu1
    trace = np.einsum("...ij,...ji->...", S2_inv, S1)
    maha = np.einsum("...i,...ij,...j->...", diff, S2_inv, diff)
    logdet2 = 2.0 * np.sum(np.log(np.diagonal(L2, axis1=-2, axis2=-1)), axis=-1)
    _, logdet1 = np.linalg.slogdet(S1)
    return np.maximum(0.5 * (trace + maha - d + logdet2 - logdet1), 0.0)


# --- data ---------------------------------------------------------------------


def sample_wishart(scale, dof: int, gen: np.random.Generator) -> np.ndarray:
    """Draw from W_d(scale, dof) via the Bartlett decomposition."""
    scale = np.atleast_2d(np.asarray(scale, dtype=np.float64))
    d = scale.shape[0]
    if dof < d:
        raise ValueError("Wishart degrees of freedom must be >= d")
    L = np.linalg.cholesky(scale)
    B = np.zeros((d, d))
    B[np.diag_indices(d)] = np.sqrt(chi2.ppf(gen.random(d), dof - np.arange(d)))
    rows, cols = np.tril_indices(d, k=-1)
    B[rows, cols] = gen.standard_normal(rows.size)
    LB = L @ B
    return LB @ LB.T


@dataclass(frozen=True)
class DensityProblem:
    """A true Gaussian and ``n`` samples from it, rescaled into the unit ball.

    The draws are divided by ``radius = scale * sqrt(tr Sigma + |mu|^2)`` (the
    root mean square norm times ``scale``); the rescaled truth is
    ``N(mu / radius, Sigma / radius^2)``. Samples still outside the unit ball
    are clipped and counted in ``clipped``.
    """

    mu: np.ndarray
    cov: np.ndarray
    X: np.ndarray
    clipped: int
    radius: float


def make_density_problem(d: int, n: int, gen: np.random.Generator, *,
                         scale: float = 2.0) -> DensityProblem:
    mu = gen.normal(scale=np.sqrt(0.5), size=d)
    cov = sample_wishart(0.5 * np.eye(d), 2 * d, gen)
    L = np.linalg.cholesky(cov + 1e-12 * np.eye(d))
    raw = mu + gen.standard_normal((n, d)) @ L.T
    radius = scale * float(np.sqrt(np.trace(cov) + mu @ mu))
    X, mask = clip_rows(raw / radius, 1.0)
    return DensityProblem(mu / radius, cov / radius**2, X, int(mask.sum()), radius)


def data_generator(seed: int, run: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=rng.philox_key(seed, rng.DATA * 1_000_003 + run)))


# --- estimator ------------------------------------------------------------------


def running_covariance(X) -> tuple[np.ndarray, np.ndarray]:
    """Exact running mean and 1/t-normalized covariance for every prefix."""
    X = np.asarray(X, dtype=np.float64)
    t = np.arange(1, X.shape[0] + 1)[:, None]
    mu = np.cumsum(X, axis=0) / t
    M = np.cumsum(X[:, :, None] * X[:, None, :], axis=0) / t[:, :, None]
    return mu, M - mu[:, :, None] * mu[:, None, :]


def density_bias_correction(method: str, sigma: float, n: int) -> np.ndarray:
    """Per-step scalar c_t so that the debiased covariance is raw - c_t I."""
    t = np.arange(1, n + 1, dtype=np.float64)
    if method == "jme-debiased":
        return -sigma**2 / t
    if method == "pp-debiased":
        return sigma**2 * (1.0 - 1.0 / t)
    return np.zeros(n)


def raw_covariances(method: str, X, sigma: float, seed: int, trial_start: int = 0,
                    n_trials: int = 1):
    """Debiased (if requested) but unprojected (mu_hat, Sigma_hat) for a batch of trials."""
    if method not in DENSITY_METHODS:
        raise ValueError(f"unknown density method {method!r}; choose from {DENSITY_METHODS}")
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    V = build_workload(WorkloadKind.average(), n)
    C = NoiseShaping.identity(n)
    base = Method.JME if method.startswith("jme") else Method.PP
    cfg = MechanismConfig(base, V, V, C, C, PrivacyParams(sigma / 2.0, 1.0), d, seed=seed)
    mu_hat, M_hat = simulate_estimates(cfg, X, trial_start, n_trials)
    M_hat = M_hat.reshape(n_trials, n, d, d)
    cov = M_hat - mu_hat[..., :, None] * mu_hat[..., None, :]
    corr = density_bias_correction(method, sigma, n)
    cov = cov - corr[None, :, None, None] * np.eye(d)
    return mu_hat, cov


def gaussian_density_stream(method: str, X, sigma: float, seed: int = 0, *, trial: int = 0,
                            floor: float = PSD_FLOOR) -> list[GaussianEstimate]:
    mu_hat, cov = raw_covariances(method, X, sigma, seed, trial, 1)
    out = []
    for t in range(cov.shape[1]):
        raw = cov[0, t]
        sym = 0.5 * (raw + raw.T)
        out.append(GaussianEstimate(t + 1, mu_hat[0, t], psd_project(sym, floor), raw))
    return out


def covariance_error_formulas(n: int, d: int, sigma: float, method: str):
    """Worst-case sum over t of E||Sigma_t - Sigma_hat_t||_F^2 (debiased, before projection)."""
    h1, h2, h3 = harmonic(n, 1), harmonic(n, 2), harmonic(n, 3)
    if method == "jme-debiased":
        return (c_d(d) * d * d + 2 * d + 2) * sigma**2 * h1 + d * (d + 1) * sigma**4 * h2
    if method == "pp-debiased":
        S = d * (d + 1) * sigma**4 * (h1 - h2) + 2 * (d + 1) * sigma**2 * h1
        return S - 2 * (d + 1) * sigma**2 * h3, S
    raise ValueError("closed forms exist for the debiased methods only")


def covariance_error_exact(X, sigma: float, method: str) -> float:
    """Expected covariance error on the specific data ``X`` (debiased methods)."""
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    k = np.arange(1, n + 1, dtype=np.float64)
    h1, h2 = harmonic(n, 1), harmonic(n, 2)
    if method == "jme-debiased":
        mean_sq = np.sum((np.cumsum(X, axis=0) / k[:, None]) ** 2, axis=1)
        return (c_d(d) * d * d * sigma**2 * h1 + 2 * (d + 1) * sigma**2 * float(np.sum(mean_sq / k))
                + d * (d + 1) * sigma**4 * h2)
    if method == "pp-debiased":
        sq = np.cumsum(np.sum(X**2, axis=1))
        sums = np.sum(np.cumsum(X, axis=0) ** 2, axis=1)
        T = float(np.sum((sq - sums / k) / k**2))
        return d * (d + 1) * sigma**4 * (h1 - h2) + 2 * (d + 1) * sigma**2 * T
    raise ValueError("closed forms exist for the debiased methods only")


@dataclass
class DensityRunResult:
    kl: np.ndarray       # (n,)
    cov_err_sq: np.ndarray  # (n,) ||Sigma_true - Sigma_hat||_F^2 after projection
    clipped: int


def density_run(method: str, d: int, n: int, sigma: float, seed: int, run: int, *,
                floor: float = PSD_FLOOR, scale: float = 2.0) -> DensityRunResult:
    """One run: draw a truth and data, release estimates, score every step by KL."""
    prob = make_density_problem(d, n, data_generator(seed, run), scale=scale)
    mu_hat, cov = raw_covariances(method, prob.X, sigma, seed, run, 1)
    sym = 0.5 * (cov[0] + np.swapaxes(cov[0], -1, -2))
    proj = psd_project(sym, floor)
    kl = gaussian_kl_batch(mu_hat[0], proj, prob.mu[None], prob.cov[None])
    err = np.sum((proj - prob.cov[None]) ** 2, axis=(1, 2))
    return DensityRunResult(kl, err, prob.clipped)
