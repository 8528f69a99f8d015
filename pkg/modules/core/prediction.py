# prediction.py
"""
新しい入力 x* における予測分布、ノイズなし場 AZ の事後分布、
および一部の出力行を観測したときの条件付き予測。

因子 l ごとに C_l = τ_l K_l + I, α_l = P_l Yᵀ â_l（fit 時の分解を再利用）:
  ẑ_l(x*) = τ_l k*ᵀ α_l
  D̂_l(x*) = σ̂₀² (τ_l + 1 - τ_l² k*ᵀ C_l⁻¹ k*)  [+ σ̂₀² rᵀ (HᵀC_l⁻¹H)⁻¹ r,  r = hᵀ - τ_l HᵀC_l⁻¹k*]
  Σ̂*      = Â D̂ Âᵀ + σ̂₀² (1 + h (HᵀH)⁻¹ hᵀ) (I - ÂÂᵀ)
"""

from __future__ import annotations

import logging
from typing import List, Optional, Sequence

import numpy as np

from modules.core.gppca_core import FittedModel
from modules.core.kernels import cross_correlation
from modules.core.linalg import jittered_cholesky, symmetrize
from modules.core.mean_structure import factor_posterior_mean, regression_posterior_mean
from modules.data.data_models import FieldPosterior, PredictiveNormal
from modules.utils.errors import GPPCAArgumentError

logger = logging.getLogger(__name__)


def _check_input(model: FittedModel, xstar) -> np.ndarray:
    x = np.atleast_1d(np.asarray(xstar, dtype=float))
    if x.ndim != 1 or x.size != model.grid.p:
        raise GPPCAArgumentError(f"x* must have dimension {model.grid.p}, got shape {np.shape(xstar)}")
    if not np.all(np.isfinite(x)):
        raise GPPCAArgumentError("x* contains non-finite entries")
    return x


def _basis_row(model: FittedModel, x: np.ndarray, covariates=None, h=None) -> Optional[np.ndarray]:
    if not model.has_mean or model.design is None:
        return None
    if h is not None:
        row = np.asarray(h, dtype=float).reshape(-1)
    elif model.design.basis is not None:
        row = model.design.basis.evaluate(x, covariates)
    else:
        raise GPPCAArgumentError("mean design has no basis evaluator; pass the basis row h(x*) explicitly")
    if row.size != model.design.q:
        raise GPPCAArgumentError(f"basis row must have {model.design.q} entries, got {row.size}")
    return row


def _predictive(model: FittedModel, x: np.ndarray, h: Optional[np.ndarray], B_hat: Optional[np.ndarray]) -> PredictiveNormal:
    A = model.loadings.values
    sigma0_sq = model.hyper.sigma0_sq
    W = model.factor_weights
    z = np.empty(model.d)
    D = np.empty(model.d)
    for l, (spec, sys) in enumerate(zip(model.hyper.kernel_specs, model.systems)):
        tau = sys.tau
        kstar = cross_correlation(spec, model.grid, x)
        z[l] = tau * float(kstar @ W[:, l])
        ck = sys.chol.solve(kstar)
        D[l] = sigma0_sq * (tau + 1.0 - tau * tau * float(kstar @ ck))
        if h is not None and sys.gls_chol is not None and model.design is not None:
            r = h - tau * (model.design.H.T @ ck)
            D[l] += sigma0_sq * float(r @ sys.gls_chol.solve(r))

    mean = A @ z
    leverage = 0.0
    if h is not None and B_hat is not None and model.design is not None:
        mean = mean + h @ B_hat
        leverage = model.design.leverage(h)
    k = model.k
    cov = (A * D) @ A.T + sigma0_sq * (1.0 + leverage) * (np.eye(k) - A @ A.T)
    return PredictiveNormal(mean, symmetrize(cov))


def predict(model: FittedModel, xstar) -> PredictiveNormal:
    """平均構造なしモデルの予測分布 N(μ̂*, Σ̂*)"""
    if model.has_mean:
        raise GPPCAArgumentError("model has a mean basis; use predict_with_mean")
    return _predictive(model, _check_input(model, xstar), None, None)


def predict_with_mean(model: FittedModel, xstar, covariates=None, h=None) -> PredictiveNormal:
    """平均構造つきモデルの予測分布。q = 0 なら predict と同じ"""
    x = _check_input(model, xstar)
    row = _basis_row(model, x, covariates, h)
    B_hat = regression_posterior_mean(model) if row is not None else None
    return _predictive(model, x, row, B_hat)


def predict_batch(model: FittedModel, xstars, covariates=None) -> List[PredictiveNormal]:
    """複数の x* をまとめて予測する。B̂ と分解は 1 回だけ計算する"""
    X = np.asarray(xstars, dtype=float)
    if X.ndim == 1:
        X = X[:, None] if model.grid.p == 1 else X[None, :]
    cov_rows = None if covariates is None else np.atleast_2d(np.asarray(covariates, dtype=float))
    if cov_rows is not None and cov_rows.shape[0] != X.shape[0]:
        raise GPPCAArgumentError("covariate rows must match the number of prediction inputs")
    B_hat = regression_posterior_mean(model) if model.has_mean else None
    out = []
    for i in range(X.shape[0]):
        x = _check_input(model, X[i])
        row = _basis_row(model, x, None if cov_rows is None else cov_rows[i])
        out.append(_predictive(model, x, row, B_hat))
    return out


def field_posterior(model: FittedModel) -> FieldPosterior:
    """
    ノイズなし場 AZ の事後分布。
    Z_l の事後共分散 = σ̂₀² (τ_l K_l - τ_l² K_l P_l K_l)  （P_l = C_l⁻¹ なら σ̂₀² (I - C_l⁻¹)）
    """
    A = model.loadings.values
    sigma0_sq = model.hyper.sigma0_sq
    Z = factor_posterior_mean(model)
    covs = []
    variances = np.zeros((model.k, model.n))
    for l, sys in enumerate(model.systems):
        TK = sys.tau * sys.K
        V = symmetrize(sigma0_sq * (TK - TK @ sys.apply_P(TK)))
        covs.append(V)
        variances += np.outer(A[:, l] ** 2, np.clip(np.diag(V), 0.0, None))
    trend = None
    if model.has_mean and model.design is not None:
        trend = (model.design.H @ regression_posterior_mean(model)).T
    return FieldPosterior(
        mean=A @ Z,
        variances=variances,
        factor_means=Z,
        factor_covariances=covs,
        loadings=A,
        trend=trend,
    )


# ══════════════════════════════════════════════════════════════
# 条件付き予測
# ══════════════════════════════════════════════════════════════

def condition_normal(pn: PredictiveNormal, observed_rows: Sequence[int], y1) -> PredictiveNormal:
    """N(μ, Σ) の観測行 observed_rows を y1 で条件づけ、残りの行の分布を返す"""
    k = pn.mean.size
    rows = np.asarray([int(i) for i in observed_rows], dtype=int)
    if rows.size == 0:
        raise GPPCAArgumentError("observed_rows must not be empty")
    if np.unique(rows).size != rows.size:
        raise GPPCAArgumentError(f"observed_rows contains duplicates: {rows.tolist()}")
    if rows.size >= k:
        raise GPPCAArgumentError("observed_rows must be a proper subset of the output rows")
    if rows.min() < 0 or rows.max() >= k:
        raise GPPCAArgumentError(f"observed row index out of range 0..{k - 1}")
    y1 = np.asarray(y1, dtype=float).reshape(-1)
    if y1.size != rows.size:
        raise GPPCAArgumentError(f"expected {rows.size} observed values, got {y1.size}")
    # 値は呼び出し側の行順に対応する
    order = np.argsort(rows)
    idx1, y1 = rows[order], y1[order]
    idx2 = np.setdiff1d(np.arange(k), idx1)

    S = pn.covariance
    S11 = S[np.ix_(idx1, idx1)]
    S21 = S[np.ix_(idx2, idx1)]
    S22 = S[np.ix_(idx2, idx2)]
    chol = jittered_cholesky(S11, label="observed-block predictive covariance")
    mean = pn.mean[idx2] + S21 @ chol.solve(y1 - pn.mean[idx1])
    cov = S22 - S21 @ chol.solve(S21.T)
    return PredictiveNormal(mean, symmetrize(cov))


def conditional_predict(model: FittedModel, xstar, observed_rows: Sequence[int], y1, covariates=None) -> PredictiveNormal:
    """一部の出力行 Y₁(x*) を観測したときの残り Y₂(x*) の予測分布"""
    return condition_normal(predict_with_mean(model, xstar, covariates), observed_rows, y1)
