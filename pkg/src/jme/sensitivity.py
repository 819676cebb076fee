"""Joint sensitivity of releasing the first and scaled second moment.

Releasing ``(C1 X, sqrt(lam) C2 (X face X))`` has squared sensitivity
``zeta^2 a^2 r_d(lam zeta^2 b^2 / a^2)`` where ``a, b`` are the largest column
norms of ``C1, C2`` and ``r_d(nu)`` is the maximum of

    ||x - y||^2 + nu ||x (x) x - y (x) y||^2     over ||x||, ||y|| <= 1.

``r_d`` has a closed form (below); ``brute_force_rd`` and
``brute_force_rd_diag`` maximize the objective numerically and serve as
independent oracles for it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .methods import DEFAULT_ALPHA, DEFAULT_TAU, Method
from .workload import NoiseShaping

SQRT5 = math.sqrt(5.0)
NU_CRIT_1D = (11.0 + 5.0 * SQRT5) / 8.0


def c_d(d: int) -> float:
    """Critical constant: r_d(1 / c_d) = 4 and r_d grows beyond it."""
    if d < 1:
        raise ValueError("d must be >= 1")
    return 8.0 / (11.0 + 5.0 * SQRT5) if d == 1 else 2.0


def r_d(nu: float, d: int) -> float:
    if d < 1:
        raise ValueError("d must be >= 1")
    if nu < 0:
        raise ValueError("nu must be non-negative")
    if d == 1:
        if nu <= NU_CRIT_1D:
            return 4.0
        tau = math.sqrt(1.0 - 2.0 / nu)
        return 0.125 * (3.0 - tau) ** 2 * (nu * tau + 1.0 + nu)
    if nu <= 0.5:
        return 4.0
    return 2.0 + 2.0 * nu + 1.0 / (2.0 * nu)


def _first_column_norm(C) -> float:
    if isinstance(C, NoiseShaping):
        return C.norm_1to2
    C = np.asarray(C, dtype=np.float64)
    norms = np.sqrt(np.sum(C**2, axis=0))
    if np.any(np.diff(norms) > 1e-12 * max(norms[0], 1.0)):
        raise ValueError("joint sensitivity formula needs non-increasing column norms")
    return float(norms[0])


def joint_sensitivity(C1, C2, lam: float, zeta: float, d: int) -> float:
    """sens_lambda(C1, C2) for ||x_i|| <= zeta."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    a = _first_column_norm(C1)
    b = _first_column_norm(C2)
    return zeta * a * math.sqrt(r_d(lam * zeta**2 * b**2 / a**2, d))


def lambda_star(C1, C2, zeta: float, d: int) -> float:
    """Scaling at which the second moment costs nothing on top of the first."""
    a = _first_column_norm(C1)
    b = _first_column_norm(C2)
    return a**2 / (c_d(d) * zeta**2 * b**2)


def first_moment_sensitivity(C1, zeta: float) -> float:
    return 2.0 * zeta * _first_column_norm(C1)


@dataclass(frozen=True)
class StreamSensitivities:
    """Per-stream sensitivities of one method.

    ``second`` is ``None`` for post-processing (no second stream). For CS both
    fields hold the sensitivity of the single concatenated stream. ``lam`` is
    the second-moment scaling for the JME variants.
    """

    first: float
    second: float | None
    lam: float | None = None


def method_sensitivities(method: Method, C1, C2, zeta: float, d: int, *,
                         lam: float | None = None, alpha: float = DEFAULT_ALPHA,
                         tau: float = DEFAULT_TAU) -> StreamSensitivities:
    method = Method(method)
    if method is Method.JME:
        lam = lambda_star(C1, C2, zeta, d)
        s = joint_sensitivity(C1, C2, lam, zeta, d)
        return StreamSensitivities(s, s, lam)
    if method is Method.LAMBDA_JME:
        if lam is None or not lam > 0:
            raise ValueError("lambda-JME needs lam > 0")
        s = joint_sensitivity(C1, C2, lam, zeta, d)
        return StreamSensitivities(s, s, lam)
    if method is Method.IME:
        if not 0 < alpha < 1:
            raise ValueError(f"IME needs alpha in (0, 1), got {alpha}")
        return StreamSensitivities(
            2.0 * zeta * _first_column_norm(C1),
            math.sqrt(2.0) * zeta**2 * _first_column_norm(C2),
        )
    if method is Method.CS:
        if not tau > 0:
            raise ValueError(f"CS needs tau > 0, got {tau}")
        s = 2.0 * zeta * math.sqrt(1.0 + tau * zeta**2) * _first_column_norm(C1)
        return StreamSensitivities(s, s)
    return StreamSensitivities(first_moment_sensitivity(C1, zeta), None)


@dataclass(frozen=True)
class SensitivityProfile:
    d: int
    zeta: float
    c_d: float
    lambda_star: float
    joint_sens: float
    first_moment_sens: float


def sensitivity_profile(C1, C2, zeta: float, d: int) -> SensitivityProfile:
    lam = lambda_star(C1, C2, zeta, d)
    return SensitivityProfile(
        d=d,
        zeta=zeta,
        c_d=c_d(d),
        lambda_star=lam,
        joint_sens=joint_sensitivity(C1, C2, lam, zeta, d),
        first_moment_sens=first_moment_sensitivity(C1, zeta),
    )


# --- brute-force oracles -----------------------------------------------------


def _ball_points(params: np.ndarray, d: int) -> np.ndarray:
    """Map (r, angles...) rows to points of the closed unit ball in R^d."""
    r = params[:, 0]
    if d == 1:
        return params[:, :1]
    if d == 2:
        theta = params[:, 1]
        return r[:, None] * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    theta, phi = params[:, 1], params[:, 2]
    st = np.sin(theta)
    return r[:, None] * np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=1)


def _kron_objective(x: np.ndarray, y: np.ndarray, nu: float) -> np.ndarray:
    diff = x - y
    kx = x[:, :, None] * x[:, None, :]
    ky = y[:, :, None] * y[:, None, :]
    return np.sum(diff**2, axis=1) + nu * np.sum((kx - ky) ** 2, axis=(1, 2))


def _diag_objective(x: np.ndarray, y: np.ndarray, nu: float) -> np.ndarray:
    return np.sum((x - y) ** 2, axis=1) + nu * np.sum((x**2 - y**2) ** 2, axis=1)


class _Search:
    """Grid search over a box of (x-params, y-params) followed by coordinate ascent."""

    def __init__(self, objective, d, nu, x_bounds, y_bounds, x_fixed=None):
        self.objective = objective
        self.d = d
        self.nu = nu
        self.x_bounds = list(x_bounds)
        self.y_bounds = list(y_bounds)
        self.x_fixed = x_fixed
        self.bounds = np.array(self.x_bounds + self.y_bounds, dtype=np.float64)

    def _points(self, p: np.ndarray):
        kx = len(self.x_bounds)
        px, py = p[:, :kx], p[:, kx:]
        if self.x_fixed is not None:
            px = self.x_fixed(px)
        return _ball_points(px, self.d), _ball_points(py, self.d)

    def value(self, p: np.ndarray) -> np.ndarray:
        x, y = self._points(np.atleast_2d(p))
        return self.objective(x, y, self.nu)

    def grid(self, resolution: int, top: int):
        """Evaluate the full product grid one slice of the leading axis at a time."""
        axes = [np.linspace(lo, hi, resolution) if hi > lo else np.array([lo])
                for lo, hi in self.bounds]
        rest = np.stack([g.ravel() for g in np.meshgrid(*axes[1:], indexing="ij")], axis=1)
        best_vals = np.empty(0)
        best_pts = np.empty((0, len(axes)))
        for first in axes[0]:
            block = np.column_stack([np.full(rest.shape[0], first), rest])
            vals = self.value(block)
            keep = np.argsort(vals, kind="stable")[-top:]
            best_vals = np.concatenate([best_vals, vals[keep]])
            best_pts = np.concatenate([best_pts, block[keep]])
            order = np.argsort(best_vals, kind="stable")[-top:]
            best_vals, best_pts = best_vals[order], best_pts[order]
        return best_pts[::-1], best_vals[::-1]

    def refine(self, p0: np.ndarray, step: np.ndarray, tol: float = 1e-10) -> float:
        p = p0.copy()
        f = float(self.value(p)[0])
        h = step.copy()
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        while np.max(h) > tol:
            improved = False
            for i in range(p.size):
                for sign in (1.0, -1.0):
                    q = p.copy()
                    q[i] = min(max(q[i] + sign * h[i], lo[i]), hi[i])
                    fq = float(self.value(q)[0])
                    if fq > f:
                        p, f, improved = q, fq, True
                        break
            if not improved:
                h *= 0.5
        return f

    def maximize(self, resolution: int, top: int = 8) -> float:
        pts, vals = self.grid(resolution, top)
        step = (self.bounds[:, 1] - self.bounds[:, 0]) / max(resolution - 1, 1)
        best = float(vals[0])
        for p in pts:
            best = max(best, self.refine(p, step))
        return best


_TWO_PI = 2.0 * math.pi


def _ball_bounds(d: int, *, orthant: bool = False):
    if d == 1:
        return [(-1.0, 1.0)]
    if d == 2:
        return [(0.0, 1.0), (0.0, 0.5 * math.pi if orthant else _TWO_PI)]
    return [(0.0, 1.0), (0.0, 0.5 * math.pi if orthant else math.pi),
            (0.0, 0.5 * math.pi if orthant else _TWO_PI)]


def brute_force_rd(nu: float, d: int, grid_resolution: int = 41, *, reduced: bool = True) -> float:
    """Numerical maximum of ||x-y||^2 + nu ||x(x)x - y(x)y||^2 over the unit ball.

    With ``reduced`` (d >= 2) the rotation invariance of the objective pins
    ``x`` to the first axis, leaving ``|x|`` and all of ``y`` free. Without it
    the full product of both balls is searched (use a low resolution).
    """
    if d not in (1, 2, 3):
        raise ValueError("grid search supports d in {1, 2, 3}")
    if d == 1:
        search = _Search(_kron_objective, 1, nu, _ball_bounds(1), _ball_bounds(1))
    elif reduced:
        def on_axis(px):
            out = np.zeros((px.shape[0], len(_ball_bounds(d))))
            out[:, 0] = px[:, 0]
            return out
        y_bounds = _ball_bounds(d)
        if d == 3:
            # y only matters through its angle to the x axis: keep it in a half plane
            y_bounds = [(0.0, 1.0), (0.0, math.pi), (0.0, 0.0)]
        search = _Search(_kron_objective, d, nu, [(0.0, 1.0)], y_bounds, x_fixed=on_axis)
    else:
        search = _Search(_kron_objective, d, nu, _ball_bounds(d), _ball_bounds(d))
    return search.maximize(grid_resolution)


def brute_force_rd_diag(nu: float, d: int, grid_resolution: int = 21) -> float:
    """Numerical maximum of ||x-y||^2 + nu ||x o x - y o y||^2 over the unit ball.

    Flipping the sign of one coordinate in both vectors leaves the objective
    unchanged, so ``x`` is restricted to the non-negative orthant.
    """
    if d not in (2, 3):
        raise ValueError("diagonal grid search supports d in {2, 3}")
    search = _Search(_diag_objective, d, nu, _ball_bounds(d, orthant=True), _ball_bounds(d))
    return search.maximize(grid_resolution)
