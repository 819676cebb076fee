"""Dense lower-triangular and Toeplitz kernels.

Lower-triangular matrices are plain ``(n, n)`` float64 arrays; the helpers here
validate shape and triangularity where it matters and otherwise stay out of the
way. Everything is dense: horizons in this package are at most a few thousand.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular


def as_lower(A, *, atol: float = 0.0) -> np.ndarray:
    """Validate and return ``A`` as a float64 lower-triangular square array."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
        raise ValueError(f"expected a non-empty square matrix, got shape {A.shape}")
    upper = np.triu(A, k=1)
    if np.any(np.abs(upper) > atol):
        raise ValueError("matrix has non-zero entries above the diagonal")
    return A


@dataclass(frozen=True)
class ToeplitzCoeffs:
    """Lower-triangular Toeplitz matrix given by its first column ``c``.

    Entry ``(i, j)`` is ``c[i - j]`` for ``i >= j`` and zero otherwise.
    """

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64).ravel()
        if c.size < 1:
            raise ValueError("need at least one coefficient")
        object.__setattr__(self, "coeffs", c)

    @property
    def n(self) -> int:
        return self.coeffs.size

    def materialize(self) -> np.ndarray:
        n = self.n
        idx = np.subtract.outer(np.arange(n), np.arange(n))
        return np.where(idx >= 0, self.coeffs[np.clip(idx, 0, None)], 0.0)


def matmul_lower(A, X) -> np.ndarray:
    """Product of a lower-triangular ``(n, n)`` matrix with an ``(n, ...)`` array."""
    A = np.asarray(A, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"workload must be square, got {A.shape}")
    if X.shape[0] != A.shape[1]:
        raise ValueError(f"shape mismatch: {A.shape} @ {X.shape}")
    return np.tensordot(A, X, axes=(1, 0))


def solve_lower(C, B) -> np.ndarray:
    """Solve ``C @ result = B`` for lower-triangular ``C``.

    ``B`` may have any number of trailing dimensions; they are flattened into
    right-hand sides for a single triangular solve.
    """
    C = np.asarray(C, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError(f"expected square matrix, got {C.shape}")
    if B.shape[0] != C.shape[0]:
        raise ValueError(f"shape mismatch: {C.shape} vs {B.shape}")
    if np.any(np.diag(C) == 0.0):
        raise np.linalg.LinAlgError("singular triangular matrix (zero on the diagonal)")
    rhs = B.reshape(B.shape[0], -1)
    out = solve_triangular(C, rhs, lower=True, check_finite=False)
    return out.reshape(B.shape)


def column_norms(C) -> np.ndarray:
    """l2 norm of every column; the maximum is the 1->2 operator norm."""
    return np.sqrt(np.sum(np.asarray(C, dtype=np.float64) ** 2, axis=0))


def norm_1to2(C) -> float:
    return float(np.max(column_norms(C)))


def toeplitz_sqrt(a: ToeplitzCoeffs) -> ToeplitzCoeffs:
    """Lower-triangular Toeplitz square root via the convolution recurrence.

    Returns ``c`` with ``sum_j c[j] * c[k - j] == a[k]`` for every ``k < n``,
    i.e. ``T(c) @ T(c) == T(a)``.
    """
    coeffs = a.coeffs
    if coeffs[0] <= 0:
        raise ValueError("leading coefficient must be positive")
    n = coeffs.size
    c = np.zeros(n)
    c[0] = np.sqrt(coeffs[0])
    for k in range(1, n):
        acc = np.dot(c[1:k], c[k - 1 : 0 : -1]) if k > 1 else 0.0
        c[k] = (coeffs[k] - acc) / (2.0 * c[0])
    return ToeplitzCoeffs(c)


def face_split_row(x) -> np.ndarray:
    """vec(x x^T) in row-major order: entry ``i * d + j`` is ``x_i * x_j``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("expected a vector")
    return face_split(x)


def face_split(X) -> np.ndarray:
    """Row-wise Kronecker product of ``X`` with itself over the last axis."""
    X = np.asarray(X, dtype=np.float64)
    d = X.shape[-1]
    return (X[..., :, None] * X[..., None, :]).reshape(*X.shape[:-1], d * d)


def square_row(x) -> np.ndarray:
    return np.square(np.asarray(x, dtype=np.float64))


def clip_rows(X, zeta: float) -> tuple[np.ndarray, np.ndarray]:
    """Scale rows exceeding norm ``zeta`` back onto the sphere.

    Returns the clipped array and a boolean mask of the rows that were clipped.
    """
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=-1)
    clipped = norms > zeta
    scale = np.where(clipped, zeta / np.where(clipped, norms, 1.0), 1.0)
    return X * scale[..., None], clipped


def check_rows(X, zeta: float, *, rtol: float = 1e-12) -> np.ndarray:
    """Raise if any row of ``X`` has norm above ``zeta``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"data must be an (n, d) array, got shape {X.shape}")
    norms = np.linalg.norm(X, axis=1)
    bad = np.flatnonzero(norms > zeta * (1 + rtol))
    if bad.size:
        raise ValueError(
            f"{bad.size} row(s) exceed the norm bound {zeta} (first: row {bad[0]}, "
            f"norm {norms[bad[0]]:.6g})"
        )
    return X
