import numpy as np
import pytest

from jme.linalg import ToeplitzCoeffs, column_norms
from jme.workload import (
    Factorization,
    NoiseShaping,
    WorkloadKind,
    build_noise_shaping,
    build_workload,
    residual_frobenius_sq,
)


def test_table_rows():
    np.testing.assert_allclose(build_workload(WorkloadKind.average(), 3)[1], [0.5, 0.5, 0])
    np.testing.assert_allclose(build_workload(WorkloadKind.window(2), 3)[2], [0, 0.5, 0.5])
    np.testing.assert_allclose(build_workload(WorkloadKind.exponential(0.9), 3)[2], [0.81, 0.9, 1])
    np.testing.assert_array_equal(build_workload(WorkloadKind.prefix(), 3), np.tril(np.ones((3, 3))))


def test_prefix_sums_rows():
    X = np.random.default_rng(0).normal(size=(6, 2))
    np.testing.assert_array_equal(build_workload(WorkloadKind.prefix(), 6) @ X, np.cumsum(X, axis=0))


@pytest.mark.parametrize("bad", [lambda: WorkloadKind.exponential(1.0),
                                 lambda: WorkloadKind.exponential(0.0),
                                 lambda: WorkloadKind.window(0),
                                 lambda: build_workload(WorkloadKind.window(4), 3),
                                 lambda: build_workload(WorkloadKind.prefix(), 0)])
def test_invalid_workloads(bad):
    with pytest.raises(ValueError):
        bad()


@pytest.mark.parametrize("text,expected", [("prefix", "prefix"), ("average", "average"),
                                           ("exp:0.9", "exp:0.9"), ("window:3", "window:3")])
def test_parse_roundtrip(text, expected):
    assert str(WorkloadKind.parse(text)) == expected


@pytest.mark.parametrize("text", ["exp", "window:x", "exp:1.5", "sum", "prefix:2"])
def test_parse_rejects(text):
    with pytest.raises(ValueError):
        WorkloadKind.parse(text)


def test_identity_shaping():
    C = build_noise_shaping(Factorization.IDENTITY, WorkloadKind.prefix(), 5)
    assert C.is_identity and C.norm_1to2 == 1.0
    np.testing.assert_array_equal(C.matrix, np.eye(5))


def test_sqrt_prefix_shaping():
    C = build_noise_shaping(Factorization.SQRT, WorkloadKind.prefix(), 4)
    np.testing.assert_allclose(C.matrix[:, 0], [1, 0.5, 0.375, 0.3125])
    assert np.all(np.diff(C.col_norms) <= 0)


def test_sqrt_exponential_roundtrip():
    C = build_noise_shaping(Factorization.SQRT, WorkloadKind.exponential(0.9), 4)
    A = build_workload(WorkloadKind.exponential(0.9), 4)
    assert np.max(np.abs(C.matrix @ C.matrix - A)) < 1e-10


@pytest.mark.parametrize("kind", ["prefix", "average", "exp:0.95", "window:5"])
def test_factorization_identity(kind):
    W = WorkloadKind.parse(kind)
    A = build_workload(W, 20)
    C = build_noise_shaping(Factorization.SQRT, W, 20)
    B = C.residual_matrix(A)
    np.testing.assert_allclose(B @ C.matrix, A, atol=1e-8)
    assert residual_frobenius_sq(A, C) == pytest.approx(np.sum(B**2))


def test_rejects_increasing_column_norms():
    with pytest.raises(ValueError, match="non-increasing"):
        NoiseShaping(np.array([[1.0, 0.0], [0.0, 2.0]]))
    with pytest.raises(ValueError, match="invertible"):
        NoiseShaping(np.array([[1.0, 0.0], [1.0, 0.0]]))


def test_inverse_gram_matches_dense_inverse():
    C = NoiseShaping.from_toeplitz(ToeplitzCoeffs([1.0, 0.5, 0.375, 0.3125]))
    Cinv = np.linalg.inv(C.matrix)
    np.testing.assert_allclose(C.inverse_gram(), Cinv @ Cinv.T, atol=1e-12)
    np.testing.assert_allclose(C.inverse_gram_diag(), np.diag(Cinv @ Cinv.T), atol=1e-12)
    np.testing.assert_allclose(column_norms(C.matrix), C.col_norms)


def test_factorization_parse():
    assert Factorization.parse("sqrt") is Factorization.SQRT
    assert Factorization.parse("Identity") is Factorization.IDENTITY
    with pytest.raises(ValueError):
        Factorization.parse("cholesky")
