import numpy as np
import pytest

from modules.core.linalg import (
    jittered_cholesky,
    orthonormalize,
    random_stiefel,
    sign_normalize,
    top_eigenvectors,
)
from modules.data.data_models import orthonormality_defect
from modules.utils.errors import GPPCAArgumentError, GPPCANumericError


def test_cholesky_logdet_and_solve():
    rng = np.random.default_rng(3)
    B = rng.standard_normal((6, 6))
    C = B @ B.T + 6.0 * np.eye(6)
    chol = jittered_cholesky(C)
    b = rng.standard_normal(6)

    assert chol.jitter == 0.0
    assert chol.logdet() == pytest.approx(np.linalg.slogdet(C)[1], rel=1e-12)
    np.testing.assert_allclose(C @ chol.solve(b), b, atol=1e-10)
    v = chol.half_solve(b)
    assert float(v @ v) == pytest.approx(float(b @ np.linalg.solve(C, b)), rel=1e-10)


def test_cholesky_adds_jitter_for_semidefinite_matrix():
    v = np.ones((4, 1))
    chol = jittered_cholesky(v @ v.T, label="rank one")

    assert chol.jitter > 0.0
    np.testing.assert_allclose(chol.reconstruct(), v @ v.T + chol.jitter * np.eye(4), atol=1e-12)


def test_cholesky_failure_reports_parameters():
    C = -np.eye(3)
    with pytest.raises(GPPCANumericError) as info:
        jittered_cholesky(C, label="bad", params={"tau": 5.0})

    assert info.value.params == {"tau": 5.0}
    assert "tau=5.0" in str(info.value)


def test_non_square_input_is_an_argument_error():
    with pytest.raises(GPPCAArgumentError):
        jittered_cholesky(np.ones((2, 3)))


def test_top_eigenvectors_are_sorted_and_sign_normalized():
    rng = np.random.default_rng(0)
    Q = orthonormalize(rng.standard_normal((5, 5)))
    S = Q @ np.diag([5.0, 4.0, 3.0, 2.0, 1.0]) @ Q.T

    w, U = top_eigenvectors(S, 3)

    np.testing.assert_allclose(w, [5.0, 4.0, 3.0], atol=1e-12)
    for l in range(3):
        assert U[np.argmax(np.abs(U[:, l])), l] > 0.0
        assert abs(abs(U[:, l] @ Q[:, l]) - 1.0) < 1e-10


def test_sign_normalize_flips_columns():
    A = np.array([[-0.8, 0.1], [0.6, -0.9]])
    out = sign_normalize(A)

    np.testing.assert_array_equal(out, np.array([[0.8, -0.1], [-0.6, 0.9]]))


def test_random_stiefel_is_orthonormal():
    A = random_stiefel(12, 4, np.random.default_rng(1))

    assert A.shape == (12, 4)
    assert orthonormality_defect(A) < 1e-12
    with pytest.raises(GPPCAArgumentError):
        random_stiefel(2, 3, np.random.default_rng(1))
