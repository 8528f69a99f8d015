import numpy as np
import pytest
from scipy.linalg import null_space

from modules.baselines.metrics import largest_principal_angle
from modules.core.gppca_core import (
    build_fitted_model,
    fit,
    gram_matrices,
    profile_log_likelihood,
    stiefel_gradient,
    stiefel_objective,
)
from modules.core.kernels import build_correlation_matrix
from modules.core.linalg import random_stiefel
from modules.core.mean_design import (
    MeanBasis,
    design_for,
    design_from_matrix,
    factor_system,
    residual_smoother,
)
from modules.core.mean_structure import (
    estimate_loadings_mean,
    factor_posterior_mean,
    noise_variance_mean,
    profile_log_likelihood_mean,
    regression_posterior_mean,
)
from modules.core.stiefel_opt import StiefelOptions, optimize_on_stiefel
from modules.data.data_models import HyperParams, InputGrid, KernelSpec, LoadingMatrix, OutputMatrix
from modules.utils.config_handler import FitConfig
from modules.utils.errors import GPPCAArgumentError


def _grid(n):
    return InputGrid(np.linspace(0.0, 1.0, n))


def _kernel(grid, gamma=0.2):
    return build_correlation_matrix(KernelSpec("matern_5_2", (gamma,)), grid)


def test_projector_laws():
    grid = _grid(12)
    design = design_for({"intercept": True, "linear_input": True}, grid)
    M, H = design.M, design.H

    assert design.q == 2
    np.testing.assert_allclose(M @ M, M, atol=1e-12)
    np.testing.assert_allclose(M @ H, 0.0, atol=1e-12)
    assert np.trace(M) == pytest.approx(10.0)


def test_rank_deficient_basis_names_the_column():
    x = np.linspace(0.0, 1.0, 8)
    H = np.column_stack([np.ones(8), x, 2.0 * x])
    with pytest.raises(GPPCAArgumentError, match="rank deficient"):
        design_from_matrix(H, ["intercept", "x", "twice_x"])


def test_basis_needs_fewer_columns_than_points():
    with pytest.raises(GPPCAArgumentError, match="q < n"):
        design_from_matrix(np.ones((2, 2)))


def test_direct_and_gls_smoothers_agree():
    grid = _grid(15)
    K = _kernel(grid)
    design = design_for({"intercept": True, "linear_input": True}, grid)

    direct = residual_smoother(K, 3.0, design, method="direct")
    gls = residual_smoother(K, 3.0, design, method="gls")

    np.testing.assert_allclose(direct, gls, atol=1e-8)


def test_smoother_without_mean_is_one_minus_inverse():
    grid = _grid(10)
    K = _kernel(grid)
    expected = np.eye(10) - np.linalg.inv(2.0 * K + np.eye(10))

    np.testing.assert_allclose(residual_smoother(K, 2.0, None, method="gls"), expected, atol=1e-10)


def test_log_determinant_includes_generalized_least_squares_term():
    grid = _grid(10)
    K = _kernel(grid)
    design = design_for({"intercept": True}, grid)
    C = 1.5 * K + np.eye(10)
    H = design.H
    expected = np.linalg.slogdet(C)[1] + np.linalg.slogdet(H.T @ np.linalg.solve(C, H))[1]

    assert factor_system(K, 1.5, design).logdet == pytest.approx(expected, rel=1e-10)


def test_empty_basis_is_the_mean_free_model():
    grid = _grid(20)
    rng = np.random.default_rng(0)
    Y = OutputMatrix(rng.standard_normal((3, 20)), grid)
    config = FitConfig(n_factors=1)

    assert design_for(None, grid) is None
    assert design_for({"intercept": False}, grid) is None
    zero_q = design_from_matrix(np.zeros((20, 0)))
    assert profile_log_likelihood(Y, 2.0, 0.3, config, zero_q) == pytest.approx(
        profile_log_likelihood(Y, 2.0, 0.3, config), rel=1e-12
    )


def test_noise_variance_matches_dense_residual_formula():
    grid = _grid(14)
    K = _kernel(grid)
    design = design_for({"intercept": True, "linear_input": True}, grid)
    rng = np.random.default_rng(4)
    Y = rng.standard_normal((3, 14))
    A = random_stiefel(3, 2, rng)
    taus = [2.0, 2.0]
    M = design.M
    inner = np.linalg.inv(M + np.linalg.inv(K) / taus[0])
    S = M @ inner @ M
    s2 = np.trace(Y @ M @ Y.T) - sum(A[:, l] @ Y @ S @ Y.T @ A[:, l] for l in range(2))

    value = noise_variance_mean(Y, A, [K, K], taus, design)

    assert value == pytest.approx(s2 / (3 * (14 - 2)), rel=1e-6)


def test_equal_covariances_use_the_eigen_solution():
    grid = _grid(16)
    K = _kernel(grid)
    design = design_for({"intercept": True}, grid)
    rng = np.random.default_rng(5)
    Y = rng.standard_normal((4, 16)) + 3.0
    sigma = 2.0 * K

    A = estimate_loadings_mean(Y, [sigma, sigma], 0.5, design).values
    G = gram_matrices(Y, [factor_system(sigma / 0.5, 1.0, design)] * 2)

    for _ in range(20):
        assert stiefel_objective(random_stiefel(4, 2, rng), G) <= stiefel_objective(A, G) + 1e-9


def test_distinct_covariances_improve_on_the_start():
    grid = _grid(16)
    design = design_for({"intercept": True}, grid)
    rng = np.random.default_rng(6)
    Y = rng.standard_normal((4, 16))
    sigmas = [_kernel(grid, 0.1), 3.0 * _kernel(grid, 0.5)]
    init = random_stiefel(4, 2, rng)
    G = gram_matrices(Y, [factor_system(S / 0.3, 1.0, design) for S in sigmas])

    A = estimate_loadings_mean(Y, sigmas, 0.3, design, init=init).values

    assert stiefel_objective(A, G) >= stiefel_objective(init, G)


TREND_B = np.array([[1.0, -2.0, 0.5], [2.0, 1.0, -1.0]])


def _trend_data(n, seed, spacing=None):
    rng = np.random.default_rng(seed)
    end = 1.0 if spacing is None else spacing * (n - 1)
    grid = InputGrid(np.linspace(0.0, end, n))
    K = _kernel(grid, 0.3)
    H = np.column_stack([np.ones(n), grid.points[:, 0]])
    A = random_stiefel(3, 1, rng)
    Z = np.linalg.cholesky(K + 1e-10 * np.eye(n)) @ rng.standard_normal(n)
    Y = (H @ TREND_B).T + np.outer(A[:, 0], Z) + 0.1 * rng.standard_normal((3, n))
    return OutputMatrix(Y, grid), A


def test_regression_coefficients_match_gls_at_fitted_parameters():
    data, _ = _trend_data(120, seed=1)
    config = FitConfig(n_factors=1, max_iter=40, mean_basis={"intercept": True, "linear_input": True})

    model = fit(data, config)
    B_hat = regression_posterior_mean(model)

    assert model.has_mean
    assert B_hat.shape == (2, 3)
    # 因子方向は τK + I の GLS、直交補空間は OLS
    H = model.design.H
    Yt = data.values.T
    A = model.loadings.values
    C = model.hyper.taus[0] * build_correlation_matrix(model.hyper.kernel_specs[0], data.grid) + np.eye(data.n)
    C_inv_H = np.linalg.solve(C, H)
    gls = np.linalg.solve(H.T @ C_inv_H, C_inv_H.T)
    ols = np.linalg.solve(H.T @ H, H.T)
    expected = gls @ Yt @ A @ A.T + ols @ Yt @ (np.eye(3) - A @ A.T)
    np.testing.assert_allclose(B_hat, expected, rtol=1e-6, atol=1e-6)
    assert factor_posterior_mean(model).shape == (1, 120)


@pytest.mark.slow
def test_regression_error_shrinks_on_a_longer_record():
    design_cfg = {"intercept": True, "linear_input": True}
    hyper = HyperParams(0.01, (100.0,), (KernelSpec("matern_5_2", (0.3,)),))
    errors = {}
    for n in (100, 400):
        errs = []
        for seed in range(10):
            data, A = _trend_data(n, seed, spacing=0.05)
            model = build_fitted_model(data, LoadingMatrix(A), hyper, design_for(design_cfg, data.grid))
            errs.append(np.max(np.abs(regression_posterior_mean(model) - TREND_B)))
        errors[n] = np.median(errs)

    assert errors[400] < errors[100]


def test_regression_needs_a_mean_model():
    grid = _grid(10)
    Y = OutputMatrix(np.random.default_rng(0).standard_normal((2, 10)), grid)
    model = fit(Y, FitConfig(n_factors=1, max_iter=5))
    with pytest.raises(GPPCAArgumentError):
        regression_posterior_mean(model)


def test_covariate_basis_uses_named_columns():
    grid = InputGrid(np.arange(6.0), covariates=np.arange(6.0) ** 2, covariate_names=("load",))
    basis = MeanBasis.from_config({"covariate_columns": ["load"]}, grid.covariate_names)

    np.testing.assert_array_equal(basis.design_matrix(grid)[:, 0], np.arange(6.0) ** 2)
    with pytest.raises(GPPCAArgumentError, match="not found"):
        MeanBasis.from_config({"covariate_columns": ["speed"]}, grid.covariate_names)


def test_intercept_projector_centers():
    design = design_for({"intercept": True}, _grid(4))

    np.testing.assert_allclose(design.M, np.eye(4) - 0.25 * np.ones((4, 4)), atol=1e-14)


def test_pure_regression_data_has_no_residual_noise():
    grid = _grid(12)
    design = design_for({"intercept": True, "linear_input": True}, grid)
    Y = (design.H @ np.array([[1.0, 0.5], [-2.0, 3.0]])).T
    K = _kernel(grid)
    A = random_stiefel(2, 1, np.random.default_rng(0))

    assert noise_variance_mean(Y, A, [K], [2.0], design) == pytest.approx(0.0, abs=1e-10)


def test_mean_profile_without_basis_matches_plain_profile():
    grid = _grid(18)
    Y = OutputMatrix(np.random.default_rng(9).standard_normal((3, 18)), grid)
    config = FitConfig(n_factors=2)

    assert profile_log_likelihood_mean(Y, 1.5, 0.25, None, config) == pytest.approx(
        profile_log_likelihood(Y, 1.5, 0.25, config), rel=1e-12
    )


def test_zero_data_gives_zero_coefficients():
    grid = _grid(10)
    design = design_for({"intercept": True}, grid)
    hyper = HyperParams(1.0, (2.0,), (KernelSpec("matern_5_2", (0.3,)),))
    model = build_fitted_model(OutputMatrix(np.zeros((2, 10)), grid), LoadingMatrix(np.eye(2)[:, :1]), hyper, design)

    np.testing.assert_array_equal(regression_posterior_mean(model), np.zeros((1, 2)))


def test_shared_eigen_solution_matches_manifold_search():
    grid = _grid(16)
    K = _kernel(grid)
    design = design_for({"intercept": True}, grid)
    rng = np.random.default_rng(10)
    Y = rng.standard_normal((5, 16))
    sigma = 1.5 * K
    G = gram_matrices(Y, [factor_system(sigma / 0.4, 1.0, design)] * 2)

    eigen = estimate_loadings_mean(Y, [sigma, sigma], 0.4, design).values
    searched, _ = optimize_on_stiefel(
        lambda A: (stiefel_objective(A, G), stiefel_gradient(A, G)),
        random_stiefel(5, 2, rng),
        StiefelOptions(max_iters=5000, grad_tol=1e-9),
    )

    assert largest_principal_angle(eigen, searched) < 1e-3


def test_gls_coefficient_identity():
    rng = np.random.default_rng(12)
    for _ in range(20):
        grid = InputGrid(np.sort(rng.uniform(0.0, 1.0, 7)))
        design = design_from_matrix(rng.standard_normal((7, 2)))
        sigma = rng.uniform(0.5, 3.0) * _kernel(grid, gamma=rng.uniform(0.1, 0.5))
        sigma0_sq = rng.choice([0.1, 1.0, 10.0])
        M_tilde = design.M / sigma0_sq
        H = design.H

        left = design.hth_inv @ H.T @ (np.eye(7) - sigma @ np.linalg.solve(M_tilde @ sigma + np.eye(7), M_tilde))
        C_inv = np.linalg.inv(sigma + sigma0_sq * np.eye(7))
        right = np.linalg.solve(H.T @ C_inv @ H, H.T @ C_inv)

        np.testing.assert_allclose(left, right, atol=1e-8)


def _residual_space_profile(Y, A, tau, K, H):
    """B を積分した密度を (n-q)k 次元の直交補空間で直接評価し、σ₀² を代入する"""
    k, n = Y.shape
    V = tau * np.kron(K, np.outer(A[:, 0], A[:, 0])) + np.eye(n * k)
    Q = null_space(np.kron(H, np.eye(k)).T)
    r = Q.T @ Y.T.reshape(-1)
    V_res = Q.T @ V @ Q
    s2 = float(r @ np.linalg.solve(V_res, r))
    _, logdet = np.linalg.slogdet(V_res)
    return -0.5 * logdet - 0.5 * Q.shape[1] * np.log(s2)


def test_mean_profile_matches_residual_space_density():
    rng = np.random.default_rng(14)
    grid = _grid(8)
    design = design_for({"intercept": True}, grid)
    Y = 1.5 + rng.standard_normal((3, 8))
    data = OutputMatrix(Y, grid)
    config = FitConfig(n_factors=1)

    ours, dense = [], []
    for tau, gamma in [(0.5, 0.2), (3.0, 0.4), (10.0, 0.9)]:
        K = _kernel(grid, gamma)
        A = estimate_loadings_mean(Y, [tau * K], 1.0, design).values
        ours.append(profile_log_likelihood_mean(data, tau, gamma, design, config))
        dense.append(_residual_space_profile(Y, A, tau, K, design.H))

    np.testing.assert_allclose(np.diff(ours), np.diff(dense), rtol=1e-6, atol=1e-8)
