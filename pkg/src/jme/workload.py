"""Workload matrices and noise-shaping factorizations.

Workloads are the lower-triangular coefficient matrices that define which
weighted sums get released at every step (prefix sums, running averages,
exponential moving averages, sliding windows). A :class:`NoiseShaping` wraps the
lower-triangular matrix ``C`` whose inverse correlates the injected noise.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .linalg import ToeplitzCoeffs, as_lower, column_norms, solve_lower, toeplitz_sqrt


class Kind(str, enum.Enum):
    PREFIX = "prefix"
    AVERAGE = "average"
    EXPONENTIAL = "exp"
    WINDOW = "window"


@dataclass(frozen=True)
class WorkloadKind:
    kind: Kind
    beta: float | None = None
    k: int | None = None

    def __post_init__(self):
        if self.kind is Kind.EXPONENTIAL:
            if self.beta is None or not 0.0 < self.beta < 1.0:
                raise ValueError(f"exponential workload needs beta in (0, 1), got {self.beta}")
        if self.kind is Kind.WINDOW:
            if self.k is None or self.k < 1:
                raise ValueError(f"sliding window needs k >= 1, got {self.k}")

    @classmethod
    def prefix(cls):
        return cls(Kind.PREFIX)

    @classmethod
    def average(cls):
        return cls(Kind.AVERAGE)

    @classmethod
    def exponential(cls, beta: float):
        return cls(Kind.EXPONENTIAL, beta=float(beta))

    @classmethod
    def window(cls, k: int):
        return cls(Kind.WINDOW, k=int(k))

    @classmethod
    def parse(cls, text: str) -> "WorkloadKind":
        """Parse ``prefix | average | exp:<beta> | window:<k>``."""
        name, _, arg = text.strip().partition(":")
        name = name.lower()
        try:
            if name == "prefix" and not arg:
                return cls.prefix()
            if name in ("average", "avg", "mean") and not arg:
                return cls.average()
            if name in ("exp", "exponential") and arg:
                return cls.exponential(float(arg))
            if name == "window" and arg:
                return cls.window(int(arg))
        except ValueError as exc:
            raise ValueError(f"bad workload spec {text!r}: {exc}") from None
        raise ValueError(f"unknown workload spec {text!r}")

    def __str__(self):
        if self.kind is Kind.EXPONENTIAL:
            return f"exp:{self.beta:g}"
        if self.kind is Kind.WINDOW:
            return f"window:{self.k}"
        return self.kind.value

    def generator(self, n: int) -> ToeplitzCoeffs:
        """First column of the Toeplitz *sum* matrix underlying the workload.

        Average and sliding window are row-rescalings of the prefix-sum and the
        window-sum matrices respectively; the generator is that of the sum.
        """
        if self.kind in (Kind.PREFIX, Kind.AVERAGE):
            return ToeplitzCoeffs(np.ones(n))
        if self.kind is Kind.EXPONENTIAL:
            return ToeplitzCoeffs(self.beta ** np.arange(n))
        c = np.zeros(n)
        c[: self.k] = 1.0
        return ToeplitzCoeffs(c)


def build_workload(kind: WorkloadKind, n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    if kind.kind is Kind.WINDOW and kind.k > n:
        raise ValueError(f"window size {kind.k} exceeds horizon {n}")
    A = kind.generator(n).materialize()
    if kind.kind is Kind.AVERAGE:
        A = A / np.arange(1, n + 1)[:, None]
    elif kind.kind is Kind.WINDOW:
        A = A / kind.k
    return A


class Factorization(str, enum.Enum):
    IDENTITY = "identity"
    SQRT = "sqrt"

    @classmethod
    def parse(cls, text: str) -> "Factorization":
        key = text.strip().lower()
        aliases = {"identity": cls.IDENTITY, "id": cls.IDENTITY, "trivial": cls.IDENTITY,
                   "sqrt": cls.SQRT, "square-root": cls.SQRT}
        if key not in aliases:
            raise ValueError(f"unknown factorization {text!r}")
        return aliases[key]


@dataclass(frozen=True, eq=False)
class NoiseShaping:
    """Invertible lower-triangular noise-shaping matrix ``C``.

    ``C^{-1}`` is never formed; :meth:`apply_inverse` solves triangular systems.
    Column norms must be non-increasing so that the worst-case neighbour sits
    in the first column.
    """

    matrix: np.ndarray
    toeplitz: ToeplitzCoeffs | None = None
    col_norms: np.ndarray = field(init=False, repr=False)
    is_identity: bool = field(init=False, repr=False)

    def __post_init__(self):
        C = as_lower(self.matrix)
        if np.any(np.diag(C) == 0.0):
            raise ValueError("noise-shaping matrix must be invertible")
        norms = column_norms(C)
        if np.any(np.diff(norms) > 1e-12 * max(norms[0], 1.0)):
            raise ValueError("noise-shaping matrix must have non-increasing column norms")
        object.__setattr__(self, "matrix", C)
        object.__setattr__(self, "col_norms", norms)
        object.__setattr__(self, "is_identity", bool(np.array_equal(C, np.eye(C.shape[0]))))

    @classmethod
    def identity(cls, n: int) -> "NoiseShaping":
        c = np.zeros(n)
        c[0] = 1.0
        return cls(np.eye(n), ToeplitzCoeffs(c))

    @classmethod
    def from_toeplitz(cls, coeffs: ToeplitzCoeffs) -> "NoiseShaping":
        return cls(coeffs.materialize(), coeffs)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def norm_1to2(self) -> float:
        return float(self.col_norms[0])

    def apply_inverse(self, Z: np.ndarray) -> np.ndarray:
        """``C^{-1} Z`` along the first axis of ``Z``."""
        if self.is_identity:
            return np.array(Z, dtype=np.float64, copy=True)
        return solve_lower(self.matrix, Z)

    def inverse_gram_diag(self) -> np.ndarray:
        """Diagonal of ``Q = C^{-1} C^{-T}``, the per-step noise variance factor."""
        Cinv = self.apply_inverse(np.eye(self.n))
        return np.sum(Cinv**2, axis=1)

    def inverse_gram(self) -> np.ndarray:
        Cinv = self.apply_inverse(np.eye(self.n))
        return Cinv @ Cinv.T

    def residual_matrix(self, A) -> np.ndarray:
        """``B = A C^{-1}``, the decoder half of the factorization ``A = B C``."""
        A = np.asarray(A, dtype=np.float64)
        # B C = A  <=>  C^T B^T = A^T
        return self.apply_inverse_transposed(A.T).T

    def apply_inverse_transposed(self, Y) -> np.ndarray:
        return solve_triangular(self.matrix, Y, lower=True, trans="T", check_finite=False)


def build_noise_shaping(factorization: Factorization, workload: WorkloadKind, n: int) -> NoiseShaping:
    if factorization is Factorization.IDENTITY:
        return NoiseShaping.identity(n)
    if workload.kind is Kind.WINDOW and workload.k > n:
        raise ValueError(f"window size {workload.k} exceeds horizon {n}")
    return NoiseShaping.from_toeplitz(toeplitz_sqrt(workload.generator(n)))


def residual_frobenius_sq(A, shaping: NoiseShaping) -> float:
    """``||A C^{-1}||_F^2``."""
    return float(np.sum(shaping.residual_matrix(A) ** 2))
