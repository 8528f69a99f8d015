import numpy as np
import pytest

from modules.core.kernels import (
    build_correlation_matrix,
    cross_correlation,
    cross_correlation_matrix,
    kernel_eval,
    kernel_from_name,
)
from modules.data.data_models import InputGrid, KernelFamily, KernelSpec
from modules.utils.errors import GPPCAArgumentError


def test_matern_matches_closed_form():
    spec = KernelSpec(KernelFamily.MATERN_5_2, (2.0,))
    d = 3.0
    s = np.sqrt(5.0) * d / 2.0
    expected = (1.0 + s + s * s / 3.0) * np.exp(-s)

    assert kernel_eval(spec, [0.0], [d]) == pytest.approx(expected, rel=1e-14)
    assert kernel_eval(spec, [1.5], [1.5]) == 1.0


def test_exponential_and_gaussian_profiles():
    exp_spec = kernel_from_name("exponential", 4.0)
    gauss_spec = kernel_from_name("Gaussian", [4.0])

    assert kernel_eval(exp_spec, 1.0, 3.0) == pytest.approx(np.exp(-0.5))
    assert kernel_eval(gauss_spec, 1.0, 3.0) == pytest.approx(np.exp(-0.25))


def test_multidimensional_kernel_is_product_of_coordinates():
    spec = KernelSpec(KernelFamily.MATERN_5_2, (1.0, 3.0))
    one = KernelSpec(KernelFamily.MATERN_5_2, (1.0,))
    three = KernelSpec(KernelFamily.MATERN_5_2, (3.0,))

    value = kernel_eval(spec, [0.0, 0.0], [0.4, 2.0])

    assert value == pytest.approx(kernel_eval(one, 0.0, 0.4) * kernel_eval(three, 0.0, 2.0))


@pytest.mark.parametrize("family", list(KernelFamily))
def test_correlation_matrix_is_symmetric_unit_diagonal_psd(family):
    grid = InputGrid(np.linspace(0.0, 10.0, 40))
    K = build_correlation_matrix(KernelSpec(family, (2.5,)), grid)

    assert np.array_equal(K, K.T)
    assert np.all(np.diag(K) == 1.0)
    assert np.min(np.linalg.eigvalsh(K)) > -1e-10


def test_single_point_matrix_is_one():
    K = build_correlation_matrix(KernelSpec("matern_5_2", (1.0,)), np.array([[3.0]]))

    assert K.shape == (1, 1)
    assert K[0, 0] == 1.0


def test_cross_correlation_matches_matrix_column():
    spec = KernelSpec(KernelFamily.GAUSSIAN, (1.7,))
    grid = InputGrid(np.arange(1.0, 8.0))
    K = build_correlation_matrix(spec, grid)

    np.testing.assert_allclose(cross_correlation(spec, grid, 4.0), K[:, 3], rtol=0, atol=1e-15)
    assert cross_correlation_matrix(spec, grid, np.array([[0.5], [9.0]])).shape == (7, 2)


def test_unknown_family_and_bad_ranges_are_rejected():
    with pytest.raises(GPPCAArgumentError, match="unknown kernel family"):
        kernel_from_name("rbf", 1.0)
    with pytest.raises(GPPCAArgumentError):
        KernelSpec(KernelFamily.MATERN_5_2, (0.0,))
    with pytest.raises(GPPCAArgumentError):
        KernelSpec(KernelFamily.MATERN_5_2, ())


def test_dimension_mismatch_is_an_argument_error():
    spec = KernelSpec(KernelFamily.MATERN_5_2, (1.0, 1.0))
    with pytest.raises(GPPCAArgumentError, match="dimension"):
        build_correlation_matrix(spec, InputGrid(np.arange(5.0)))
