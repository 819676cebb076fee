"""Differentially private Adam with jointly privatized moments, on toy objectives.

Each step clips the per-example gradients to norm ``zeta`` and averages them
into ``x_i`` (so ``||x_i|| <= zeta``, the row bound the moment mechanisms
assume). Then ``x_i`` and ``x_i o x_i`` are privatized by one of:

* ``jme``: independent shaped noise on both, second stream scaled by
  ``lambda^{-1/2}`` (diagonal JME; same sensitivity as the full matrix form);
* ``pp``: square the noisy gradient (classic DP-Adam);
* ``pp-debiased``: as ``pp`` minus the known noise variance;
* ``joint-clip``: CS on the concatenation ``(x, sqrt(tau) x o x)``;
* ``none``: no noise (plain Adam on clipped gradients).

``sigma`` is the application-level noise level: the stddev of the noise on each
gradient coordinate for identity shaping and ``zeta = 1``, i.e. twice the
Gaussian-mechanism multiplier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_expit

from ..calibration import PrivacyParams
from ..linalg import ToeplitzCoeffs, clip_rows, toeplitz_sqrt
from ..mechanisms import draw_shaped_noise, noise_scales
from ..methods import DEFAULT_TAU, Method
from ..workload import NoiseShaping

ADAM_METHODS = ("jme", "pp", "pp-debiased", "joint-clip", "none")
_MECHANISM = {"jme": Method.JME, "pp": Method.PP, "pp-debiased": Method.PP,
              "joint-clip": Method.CS}


def ema_workload(beta: float, n: int, *, bias_correction: bool = True) -> np.ndarray:
    """Matrix form of ``m_i = beta m_{i-1} + (1 - beta) x_i`` (optionally / (1 - beta^i))."""
    i = np.arange(n)
    lag = np.subtract.outer(i, i)
    A = np.where(lag >= 0, (1.0 - beta) * beta ** np.clip(lag, 0, None), 0.0)
    if bias_correction:
        A = A / (1.0 - beta ** (i + 1.0))[:, None]
    return A


def ema_shaping(beta: float, n: int, factorization: str = "identity") -> NoiseShaping:
    if factorization == "identity":
        return NoiseShaping.identity(n)
    if factorization == "sqrt":
        return NoiseShaping.from_toeplitz(toeplitz_sqrt(ToeplitzCoeffs(beta ** np.arange(n))))
    raise ValueError(f"unknown factorization {factorization!r}")


# --- tasks ----------------------------------------------------------------------


@dataclass
class SyntheticTask:
    """Toy objective with per-example gradients.

    ``quadratic``: ``f(theta) = 1/2 sum_j h_j (theta_j - opt_j)^2`` with curvatures
    log-spaced in ``[1, condition]``; per-example gradients are the full
    gradient plus centred perturbations of size ``noise`` (default 0, so the
    optimum is exact). ``logreg``: logistic regression on Gaussian features
    with labels drawn from a planted model.
    """

    kind: str = "quadratic"
    d: int = 10
    n_samples: int = 512
    condition: float = 10.0
    noise: float = 0.0
    seed: int = 0
    optimum: np.ndarray | None = field(init=False, default=None)

    def __post_init__(self):
        gen = np.random.default_rng(self.seed)
        if self.kind == "quadratic":
            self.h = np.logspace(0.0, math.log10(self.condition), self.d)
            self.optimum = gen.normal(size=self.d)
            xi = gen.normal(size=(self.n_samples, self.d))
            self.perturb = self.noise * (xi - xi.mean(axis=0))
        elif self.kind == "logreg":
            self.features = gen.normal(size=(self.n_samples, self.d)) / math.sqrt(self.d)
            w = gen.normal(size=self.d) * 3.0
            self.labels = (gen.random(self.n_samples) < expit(self.features @ w)).astype(float)
        else:
            raise ValueError(f"unknown task {self.kind!r} (quadratic|logreg)")

    def initial_theta(self) -> np.ndarray:
        return np.zeros(self.d)

    def loss(self, theta) -> float:
        if self.kind == "quadratic":
            return 0.5 * float(np.sum(self.h * (theta - self.optimum) ** 2))
        z = self.features @ theta
        return float(-np.mean(self.labels * log_expit(z) + (1 - self.labels) * log_expit(-z)))

    def example_gradients(self, theta, idx) -> np.ndarray:
        if self.kind == "quadratic":
            return self.h * (theta - self.optimum) + self.perturb[idx]
        F = self.features[idx]
        return (expit(F @ theta) - self.labels[idx])[:, None] * F


# --- optimizer --------------------------------------------------------------------


@dataclass
class AdamConfig:
    lr: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    zeta: float = 1.0
    sigma: float = 0.0
    batch_size: int = 1
    factorization: str = "identity"
    tau: float = DEFAULT_TAU
    update_clip: float | None = None  # norm bound on m_hat / (sqrt(v_hat) + eps)
    seed: int = 0


@dataclass
class AdamState:
    theta: np.ndarray
    m: np.ndarray
    v: np.ndarray
    i: int
    config: AdamConfig
    method: str
    noise_first: np.ndarray | None
    noise_second: np.ndarray | None
    variance: np.ndarray | None  # per-step noise variance removed by pp-debiased
    clean_v: np.ndarray = None
    last_grad_err_sq: float = 0.0
    last_v_err_sq: float = 0.0

    @property
    def n(self) -> int:
        return 0 if self.noise_first is None else self.noise_first.shape[0]


def adam_noise(method: str, d: int, n: int, config: AdamConfig, trial: int = 0):
    """Noise rows for one run: ``(E1, E2, variance)``; all ``None`` for ``none``.

    ``variance`` is the per-step noise variance per coordinate, removed by
    ``pp-debiased``. With identity shaping no n x n matrix is formed, so long
    runs stay cheap.
    """
    if method == "none":
        return None, None, None
    mech = _MECHANISM[method]
    if config.factorization == "identity":
        # only the largest column norm (1) enters the scales
        C1 = C2 = NoiseShaping.identity(1)
        shape1 = shape2 = None
    else:
        C1 = shape1 = ema_shaping(config.beta1, n, config.factorization)
        C2 = shape2 = ema_shaping(config.beta2, n, config.factorization)
    if method == "joint-clip":
        C2, shape2 = C1, shape1
    privacy = PrivacyParams(config.sigma / 2.0, config.zeta)
    scales = noise_scales(mech, C1, C2, privacy, d, tau=config.tau)
    E1, E2 = draw_shaped_noise(mech, scales, shape1, shape2, n, d, d, config.seed, trial, 1)
    E2 = None if E2 is None else E2[0]
    variance = None
    if method == "pp-debiased":
        q_diag = np.ones(n) if shape1 is None else shape1.inverse_gram_diag()
        variance = scales.first**2 * q_diag
    return E1[0], E2, variance


def init_adam(theta0, method: str, n: int, config: AdamConfig, trial: int = 0) -> AdamState:
    if method not in ADAM_METHODS:
        raise ValueError(f"unknown DP-Adam method {method!r}; choose from {ADAM_METHODS}")
    theta0 = np.asarray(theta0, dtype=np.float64).copy()
    d = theta0.size
    E1, E2, var = adam_noise(method, d, n, config, trial)
    state = AdamState(theta0, np.zeros(d), np.zeros(d), 0, config, method, E1, E2, var)
    state.clean_v = np.zeros(d)
    return state


def privatize(state: AdamState, x: np.ndarray):
    """Noisy ``(x_hat, x2_hat)`` for the current step."""
    if state.method == "none":
        return x, x**2
    if state.noise_first is None or state.i >= state.n:
        raise RuntimeError("DP-Adam noise horizon exhausted")
    x_hat = x + state.noise_first[state.i]
    if state.method in ("jme", "joint-clip"):
        return x_hat, x**2 + state.noise_second[state.i]
    x2 = x_hat**2
    if state.variance is not None:
        x2 = x2 - state.variance[state.i]
    return x_hat, x2


def dp_adam_step(state: AdamState, grad_batch) -> AdamState:
    """One Adam update from a batch of per-example gradients (updates ``state`` in place)."""
    cfg = state.config
    grads = np.atleast_2d(np.asarray(grad_batch, dtype=np.float64))
    if grads.shape[0] == 0:
        raise ValueError("empty gradient batch")
    x = clip_rows(grads, cfg.zeta)[0].mean(axis=0)
    x_hat, x2_hat = privatize(state, x)
    state.i += 1
    i = state.i
    state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * x_hat
    state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * x2_hat
    state.clean_v = cfg.beta2 * state.clean_v + (1.0 - cfg.beta2) * x**2
    m_hat = state.m / (1.0 - cfg.beta1**i)
    v_hat = state.v / (1.0 - cfg.beta2**i)
    # the stored EMA stays unclamped; only the square root sees max(v, 0)
    direction = m_hat / (np.sqrt(np.maximum(v_hat, 0.0)) + cfg.eps)
    if cfg.update_clip is not None:
        direction = clip_rows(direction[None], cfg.update_clip)[0][0]
    state.theta = state.theta - cfg.lr * direction
    state.last_grad_err_sq = float(np.sum((x_hat - x) ** 2))
    state.last_v_err_sq = float(np.sum((v_hat - state.clean_v / (1.0 - cfg.beta2**i)) ** 2))
    return state


@dataclass
class AdamRun:
    loss: np.ndarray
    grad_err_sq: np.ndarray
    v_err_sq: np.ndarray
    theta: np.ndarray


def run_dp_adam(task: SyntheticTask, method: str, config: AdamConfig, steps: int,
                trial: int = 0) -> AdamRun:
    """Run ``steps`` updates; batches are drawn from a generator seeded by ``config.seed``."""
    state = init_adam(task.initial_theta(), method, steps, config, trial)
    batches = np.random.default_rng([config.seed, trial, 7])
    loss = np.empty(steps)
    gerr = np.empty(steps)
    verr = np.empty(steps)
    for k in range(steps):
        idx = batches.integers(0, task.n_samples, size=config.batch_size)
        dp_adam_step(state, task.example_gradients(state.theta, idx))
        loss[k] = task.loss(state.theta)
        gerr[k] = state.last_grad_err_sq
        verr[k] = state.last_v_err_sq
    return AdamRun(loss, gerr, verr, state.theta)
