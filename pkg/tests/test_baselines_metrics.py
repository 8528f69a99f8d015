import numpy as np
import pytest

from modules.baselines.estimators import lag_covariance, ly_loadings, pca_loadings, ppca_loadings, projected_mean
from modules.baselines.metrics import avg_mse, largest_principal_angle, prediction_scores
from modules.core.linalg import orthonormalize
from modules.data.data_models import PredictiveNormal, SubspaceMethod
from modules.utils.errors import GPPCAArgumentError


def _low_rank(k=6, d=2, n=50, seed=0):
    rng = np.random.default_rng(seed)
    A = orthonormalize(rng.standard_normal((k, d)))
    Z = np.cumsum(rng.standard_normal((d, n)), axis=1)
    return A, A @ Z


def test_pca_recovers_noise_free_subspace():
    A, Y = _low_rank()
    est = pca_loadings(Y, 2)

    assert est.method is SubspaceMethod.PCA
    assert largest_principal_angle(est.loadings, A) < 1e-8
    np.testing.assert_allclose(projected_mean(est, Y), Y, atol=1e-8)


def test_ppca_shares_the_pca_subspace_and_reports_noise():
    rng = np.random.default_rng(1)
    A, Y = _low_rank(seed=1)
    Y = Y + 0.5 * rng.standard_normal(Y.shape)

    pca = pca_loadings(Y, 2)
    ppca = ppca_loadings(Y, 2)
    eig = np.sort(np.linalg.eigvalsh(Y @ Y.T / Y.shape[1]))[::-1]

    assert largest_principal_angle(pca.loadings, ppca.loadings) < 1e-8
    assert ppca.noise_variance == pytest.approx(np.mean(eig[2:]))


def test_estimator_rank_limits():
    _, Y = _low_rank(k=4, n=3)
    with pytest.raises(GPPCAArgumentError):
        pca_loadings(Y, 4)
    with pytest.raises(GPPCAArgumentError):
        ppca_loadings(Y, 3)
    with pytest.raises(GPPCAArgumentError):
        ly_loadings(Y, 1, 3)


def test_lag_covariance_definition():
    Y = np.arange(12.0).reshape(2, 6)
    expected = sum(np.outer(Y[:, t + 2], Y[:, t]) for t in range(4)) / 6.0

    np.testing.assert_allclose(lag_covariance(Y, 2), expected)


def test_ly_finds_persistent_factors():
    A, Y = _low_rank(k=8, d=2, n=300, seed=3)
    Y = Y + 0.1 * np.random.default_rng(3).standard_normal(Y.shape)

    for q0 in (1, 5):
        est = ly_loadings(Y, 2, q0)
        assert est.method is SubspaceMethod.LY
        assert largest_principal_angle(est.loadings, A) < 0.05


def test_ly_on_a_constant_series_matches_pca():
    a = np.array([3.0, -1.0, 2.0, 0.5])
    Y = np.outer(a, np.ones(40))

    for q0 in (1, 5):
        est = ly_loadings(Y, 1, q0)
        assert largest_principal_angle(est.loadings, pca_loadings(Y, 1).loadings) < 1e-8


def test_principal_angle_extremes():
    e = np.eye(4)
    assert largest_principal_angle(e[:, :2], e[:, :2]) == pytest.approx(0.0, abs=1e-15)
    assert largest_principal_angle(e[:, :2], e[:, 2:]) == pytest.approx(np.pi / 2)
    assert largest_principal_angle(e[:, [0]], (e[:, [0]] + e[:, [1]]) / np.sqrt(2)) == pytest.approx(np.pi / 4)
    with pytest.raises(GPPCAArgumentError):
        largest_principal_angle(e[:, :2], e[:, :3])


def test_avg_mse_pools_all_entries():
    est = [np.zeros((2, 2)), np.zeros((1, 2))]
    truth = [np.ones((2, 2)), 2.0 * np.ones((1, 2))]

    assert avg_mse(est, truth) == pytest.approx((4 * 1.0 + 2 * 4.0) / 6)
    with pytest.raises(GPPCAArgumentError):
        avg_mse([np.zeros(2)], [np.zeros(3)])


def test_prediction_scores_from_normals_and_triples():
    preds = [PredictiveNormal([0.0, 1.0], np.eye(2)), PredictiveNormal([2.0, 3.0], 4.0 * np.eye(2))]
    truth = np.array([[0.5, 1.0], [10.0, 3.0]])  # m x k

    report = prediction_scores(preds, truth)

    assert report.coverage_95 == pytest.approx(0.75)
    assert report.avg_interval_length == pytest.approx((2 * 3.92 + 2 * 7.84) / 4)
    assert report.rmse == pytest.approx(np.sqrt((0.25 + 0.0 + 64.0 + 0.0) / 4))
    assert np.isnan(report.largest_angle)

    triples = [(0.0, -1.0, 1.0), (5.0, 4.0, 6.0)]
    assert prediction_scores(triples, [0.5, 7.0]).coverage_95 == pytest.approx(0.5)


def test_prediction_scores_square_truth_keeps_row_order():
    # k == m でも i 行目は i 番目の予測に対応する
    preds = [PredictiveNormal([0.0, 0.0], np.eye(2)), PredictiveNormal([5.0, 5.0], np.eye(2))]
    truth = np.array([[0.0, 0.0], [5.0, 5.0]])

    report = prediction_scores(preds, truth)

    assert report.rmse == pytest.approx(0.0)
    assert report.coverage_95 == pytest.approx(1.0)

    with pytest.raises(GPPCAArgumentError, match="one row per prediction"):
        prediction_scores(preds, np.zeros((3, 2)))


def test_prediction_scores_fills_angle_from_loadings():
    preds = [PredictiveNormal([0.0], np.eye(1))]
    A_true = np.array([[1.0], [0.0]])
    A_hat = np.array([[0.0], [1.0]])

    report = prediction_scores(preds, [[0.0]], A_true=A_true, A_hat=A_hat)

    assert report.largest_angle == pytest.approx(np.pi / 2)
