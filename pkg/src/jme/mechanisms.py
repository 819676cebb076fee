"""Streaming estimators of the first and second moment under continual release.

All five methods share one noise model. Each trial draws standard normal
blocks from counter-based streams, shapes them with ``C^{-1}`` over the whole
horizon and scales them by the per-stream standard deviation. The streaming
:class:`MomentEstimator` and the vectorized :func:`simulate` both go through
:func:`draw_noise`, so trial ``k`` of a simulation is bit-identical to a
streaming run with ``trial=k``.

Second moments come in two forms. ``"full"`` releases ``vec(x x^T)`` (length
``d^2``, row-major). ``"diag"`` releases ``x o x`` (length ``d``), the form used
by the Adam application.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .calibration import PrivacyParams
from .linalg import as_lower, check_rows, clip_rows, face_split, matmul_lower, square_row
from .methods import DEFAULT_ALPHA, DEFAULT_TAU, Method
from .sensitivity import method_sensitivities
from .workload import NoiseShaping

FORMS = ("full", "diag")
DEFAULT_CHUNK = 2048


@dataclass(frozen=True)
class NoiseScales:
    """Standard deviations of the (pre-shaping) noise on each released stream.

    ``second`` already includes the lambda^{-1/2} factor of the JME variants and
    the 1/sqrt(tau) rescaling of CS; it is ``None`` for PP.
    """

    first: float
    second: float | None
    sensitivity: float
    lam: float | None = None


def noise_scales(method, C1, C2, privacy: PrivacyParams, d: int, *, lam=None,
                 alpha: float = DEFAULT_ALPHA, tau: float = DEFAULT_TAU) -> NoiseScales:
    method = Method(method)
    sig = privacy.sigma
    zeta = privacy.zeta
    sens = method_sensitivities(method, C1, C2, zeta, d, lam=lam, alpha=alpha, tau=tau)
    if method in (Method.JME, Method.LAMBDA_JME):
        std = sig * sens.first
        return NoiseScales(std, std / math.sqrt(sens.lam), sens.first, sens.lam)
    if method is Method.IME:
        return NoiseScales(sig / math.sqrt(alpha) * sens.first,
                           sig / math.sqrt(1.0 - alpha) * sens.second, sens.first)
    if method is Method.CS:
        std = sig * sens.first
        return NoiseScales(std, std / math.sqrt(tau), sens.first)
    return NoiseScales(sig * sens.first, None, sens.first)


@dataclass(frozen=True, eq=False)
class MechanismConfig:
    method: Method
    A1: np.ndarray
    A2: np.ndarray
    C1: NoiseShaping
    C2: NoiseShaping
    privacy: PrivacyParams
    d: int
    lam: float | None = None
    alpha: float = DEFAULT_ALPHA
    tau: float = DEFAULT_TAU
    form: str = "full"
    seed: int = 0
    clip: bool = False
    symmetrize: bool = False
    scales: NoiseScales = field(init=False, repr=False)

    def __post_init__(self):
        method = Method(self.method)
        object.__setattr__(self, "method", method)
        A1 = as_lower(self.A1)
        A2 = as_lower(self.A2)
        object.__setattr__(self, "A1", A1)
        object.__setattr__(self, "A2", A2)
        n = A1.shape[0]
        if A2.shape[0] != n or self.C1.n != n or self.C2.n != n:
            raise ValueError("workloads and noise-shaping matrices must share the horizon n")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.form not in FORMS:
            raise ValueError(f"second_moment_form must be one of {FORMS}, got {self.form!r}")
        if self.symmetrize and self.form != "full":
            raise ValueError("symmetrize only applies to the full second-moment form")
        if method is Method.CS and not (
            self.C1 is self.C2 or np.array_equal(self.C1.matrix, self.C2.matrix)
        ):
            raise ValueError("CS uses one noise-shaping matrix: C1 and C2 must be equal")
        scales = noise_scales(method, self.C1, self.C2, self.privacy, self.d,
                              lam=self.lam, alpha=self.alpha, tau=self.tau)
        object.__setattr__(self, "scales", scales)

    @property
    def n(self) -> int:
        return self.A1.shape[0]

    @property
    def q(self) -> int:
        """Length of one released second-moment row."""
        return self.d * self.d if self.form == "full" else self.d


def second_moment_rows(X: np.ndarray, form: str) -> np.ndarray:
    return face_split(X) if form == "full" else square_row(X)


def draw_shaped_noise(method: Method, scales: NoiseScales, C1, C2, n: int, d: int, q: int,
                      seed: int, first_trial: int, n_trials: int):
    """Shaped noise ``std * C^{-1} Z`` for a batch of trials.

    Returns ``(E1, E2)`` of shapes (n_trials, n, d) and (n_trials, n, q); ``E2``
    is ``None`` when ``scales.second`` is. A shaping of ``None`` means identity
    (no solve). CS draws one concatenated block and shapes it with ``C1``.
    """

    def shape(C, Z):
        if C is None or C.is_identity:
            return Z
        return np.moveaxis(C.apply_inverse(np.moveaxis(Z, 0, 1)), 1, 0)

    if method is Method.CS:
        stream = rng.NoiseStream(seed, rng.CONCATENATED, n * (d + q))
        Z = stream.normals(first_trial, n_trials).reshape(n_trials, n, d + q)
        shaped = shape(C1, Z)
        return scales.first * shaped[..., :d], scales.second * shaped[..., d:]
    Z1 = rng.NoiseStream(seed, rng.FIRST_MOMENT, n * d).normals(first_trial, n_trials)
    E1 = scales.first * shape(C1, Z1.reshape(n_trials, n, d))
    if scales.second is None:
        return E1, None
    Z2 = rng.NoiseStream(seed, rng.SECOND_MOMENT, n * q).normals(first_trial, n_trials)
    return E1, scales.second * shape(C2, Z2.reshape(n_trials, n, q))


def draw_noise(config: MechanismConfig, first_trial: int, n_trials: int):
    """Shaped noise of ``config`` for trials ``first_trial ... first_trial + n_trials - 1``."""
    return draw_shaped_noise(config.method, config.scales, config.C1, config.C2, config.n,
                             config.d, config.q, config.seed, first_trial, n_trials)


def pp_bias_term(A2, C1, noise_std: float, t: int) -> float:
    """Expected excess on each diagonal entry of the PP second moment at step ``t``.

    ``t`` is 1-based. ``noise_std`` is the stddev of the first-moment noise
    before shaping, so step ``k`` carries variance ``noise_std^2 Q_kk`` per
    coordinate with ``Q = C1^{-1} C1^{-T}``.
    """
    A2 = np.asarray(A2, dtype=np.float64)
    if not 1 <= t <= A2.shape[0]:
        raise ValueError(f"t must lie in [1, {A2.shape[0]}], got {t}")
    if not isinstance(C1, NoiseShaping):
        C1 = NoiseShaping(C1)
    return float(noise_std**2 * (A2[t - 1] @ C1.inverse_gram_diag()))


def pp_bias_vector(A2, C1: NoiseShaping, noise_std: float) -> np.ndarray:
    """pp_bias_term for every step at once."""
    return noise_std**2 * (np.asarray(A2) @ C1.inverse_gram_diag())


def _identity_pattern(d: int, form: str) -> np.ndarray:
    return np.eye(d).ravel() if form == "full" else np.ones(d)


def _symmetrize_rows(S: np.ndarray, d: int) -> np.ndarray:
    M = S.reshape(*S.shape[:-1], d, d)
    return (0.5 * (M + np.swapaxes(M, -1, -2))).reshape(S.shape)


def prepare_data(config: MechanismConfig, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape != (config.n, config.d):
        raise ValueError(f"data must have shape ({config.n}, {config.d}), got {X.shape}")
    if config.clip:
        return clip_rows(X, config.privacy.zeta)[0]
    return check_rows(X, config.privacy.zeta)


def estimates_from_noise(config: MechanismConfig, X: np.ndarray, E1, E2):
    """Ŷ, Ŝ for a batch of trials given shaped noise (leading axis = trial)."""
    Xn = X[None] + E1
    A1 = config.A1
    A2 = config.A2
    Y_hat = np.einsum("ts,ksd->ktd", A1, Xn, optimize=True)
    if config.method.is_pp:
        rows = second_moment_rows(Xn, config.form)
    else:
        rows = second_moment_rows(X, config.form)[None] + E2
    S_hat = np.einsum("ts,ksq->ktq", A2, rows, optimize=True)
    if config.method is Method.PP_DEBIASED:
        bias = pp_bias_vector(A2, config.C1, config.scales.first)
        S_hat -= bias[None, :, None] * _identity_pattern(config.d, config.form)
    if config.symmetrize:
        S_hat = _symmetrize_rows(S_hat, config.d)
    return Y_hat, S_hat


def true_moments(config: MechanismConfig, X: np.ndarray):
    return matmul_lower(config.A1, X), matmul_lower(config.A2, second_moment_rows(X, config.form))


def simulate_estimates(config: MechanismConfig, X, first_trial: int = 0, n_trials: int = 1):
    X = prepare_data(config, X)
    E1, E2 = draw_noise(config, first_trial, n_trials)
    return estimates_from_noise(config, X, E1, E2)


@dataclass
class SimulationResult:
    """Per-trial, per-step squared errors (and optionally mean signed errors)."""

    err_first: np.ndarray   # (trials, n): ||Y_t - Ŷ_t||^2
    err_second: np.ndarray  # (trials, n): ||S_t - Ŝ_t||^2
    bias_first: np.ndarray | None = None   # (n, d) mean of Ŷ - Y
    bias_second: np.ndarray | None = None  # (n, q) mean of Ŝ - S
    bias_first_se: np.ndarray | None = None
    bias_second_se: np.ndarray | None = None

    @property
    def total_first(self) -> np.ndarray:
        return self.err_first.sum(axis=1)

    @property
    def total_second(self) -> np.ndarray:
        return self.err_second.sum(axis=1)


def simulate(config: MechanismConfig, X, trials: int, *, first_trial: int = 0,
             chunk: int = DEFAULT_CHUNK, track_bias: bool = False) -> SimulationResult:
    """Monte-Carlo run of ``trials`` independent releases on fixed data ``X``.

    Trials are processed in chunks; since trial ``k`` always reads the same
    counter block, results do not depend on ``chunk``.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    X = prepare_data(config, X)
    Y, S = true_moments(config, X)
    n, d, q = config.n, config.d, config.q
    err1 = np.empty((trials, n))
    err2 = np.empty((trials, n))
    if track_bias:
        sums = [np.zeros((n, d)), np.zeros((n, q))]
        sq = [np.zeros((n, d)), np.zeros((n, q))]
    for start in range(0, trials, chunk):
        m = min(chunk, trials - start)
        E1, E2 = draw_noise(config, first_trial + start, m)
        Y_hat, S_hat = estimates_from_noise(config, X, E1, E2)
        D1 = Y_hat - Y[None]
        D2 = S_hat - S[None]
        err1[start:start + m] = np.sum(D1**2, axis=2)
        err2[start:start + m] = np.sum(D2**2, axis=2)
        if track_bias:
            for i, D in enumerate((D1, D2)):
                sums[i] += D.sum(axis=0)
                sq[i] += (D**2).sum(axis=0)
    result = SimulationResult(err1, err2)
    if track_bias:
        means = [s / trials for s in sums]
        ses = [np.sqrt(np.maximum(s2 / trials - mu**2, 0.0) / max(trials - 1, 1))
               for s2, mu in zip(sq, means)]
        result.bias_first, result.bias_second = means
        result.bias_first_se, result.bias_second_se = ses
    return result


@dataclass(frozen=True)
class MomentEstimate:
    t: int
    y_hat: np.ndarray
    s_hat: np.ndarray


class MomentEstimator:
    """Sequential estimator: feed one row per step, get (Ŷ_t, Ŝ_t) back.

    The noise for the whole horizon is drawn up front (it is correlated across
    steps through ``C^{-1}``); only the data arrive online.
    """

    def __init__(self, config: MechanismConfig, trial: int = 0):
        self.config = config
        E1, E2 = draw_noise(config, trial, 1)
        self._E1 = E1[0]
        self._E2 = None if E2 is None else E2[0]
        self._noisy_first = np.zeros((config.n, config.d))
        self._noisy_second = np.zeros((config.n, config.q))
        self.t = 0
        if config.method is Method.PP_DEBIASED:
            self._bias = pp_bias_vector(config.A2, config.C1, config.scales.first)
        else:
            self._bias = None

    @property
    def lam(self) -> float | None:
        return self.config.scales.lam

    def step(self, x) -> MomentEstimate:
        cfg = self.config
        if self.t >= cfg.n:
            raise RuntimeError(f"estimator exhausted after n={cfg.n} steps")
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (cfg.d,):
            raise ValueError(f"expected a row of length {cfg.d}, got shape {x.shape}")
        if cfg.clip:
            x = clip_rows(x[None], cfg.privacy.zeta)[0][0]
        else:
            check_rows(x[None], cfg.privacy.zeta)
        t = self.t
        x_noisy = x + self._E1[t]
        self._noisy_first[t] = x_noisy
        if cfg.method.is_pp:
            self._noisy_second[t] = second_moment_rows(x_noisy, cfg.form)
        else:
            self._noisy_second[t] = second_moment_rows(x, cfg.form) + self._E2[t]
        y_hat = cfg.A1[t, : t + 1] @ self._noisy_first[: t + 1]
        s_hat = cfg.A2[t, : t + 1] @ self._noisy_second[: t + 1]
        if self._bias is not None:
            s_hat = s_hat - self._bias[t] * _identity_pattern(cfg.d, cfg.form)
        if cfg.symmetrize:
            s_hat = _symmetrize_rows(s_hat, cfg.d)
        self.t += 1
        return MomentEstimate(t + 1, y_hat, s_hat)

    def run_stream(self, X) -> list[MomentEstimate]:
        return [self.step(x) for x in np.asarray(X, dtype=np.float64)]


def new_estimator(config: MechanismConfig, trial: int = 0) -> MomentEstimator:
    return MomentEstimator(config, trial)


def run_stream(config: MechanismConfig, X, trial: int = 0) -> list[MomentEstimate]:
    return MomentEstimator(config, trial).run_stream(X)
