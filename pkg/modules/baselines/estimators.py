# estimators.py
"""
比較用の負荷推定: PCA、PPCA、ラグ共分散（LY）推定。
"""

from __future__ import annotations

import logging

import numpy as np

from modules.core.linalg import top_eigenvectors
from modules.data.data_models import SubspaceEstimate, SubspaceMethod
from modules.utils.errors import GPPCAArgumentError

logger = logging.getLogger(__name__)


def _as_y(Y) -> np.ndarray:
    values = getattr(Y, "values", Y)
    Y = np.asarray(values, dtype=float)
    if Y.ndim != 2:
        raise GPPCAArgumentError(f"Y must be a k x n matrix, got shape {Y.shape}")
    return Y


def pca_loadings(Y, d: int) -> SubspaceEstimate:
    """YYᵀ の上位 d 固有ベクトル"""
    Y = _as_y(Y)
    k, n = Y.shape
    if d < 1 or d > min(k, n):
        raise GPPCAArgumentError(f"PCA needs 1 <= d <= min(k, n) = {min(k, n)}, got d={d}")
    _, U = top_eigenvectors(Y @ Y.T, d)
    return SubspaceEstimate(U, SubspaceMethod.PCA)


def ppca_loadings(Y, d: int) -> SubspaceEstimate:
    """
    確率的 PCA。負荷 U(D - σ₀²I)^{1/2} の列空間は PCA と同じなので
    直交化した負荷は PCA の固有ベクトルになる。σ₀² は YYᵀ/n の末尾 k-d 固有値の平均。
    """
    Y = _as_y(Y)
    k, n = Y.shape
    if d < 1 or d >= min(k, n):
        raise GPPCAArgumentError(f"PPCA needs 1 <= d < min(k, n) = {min(k, n)}, got d={d}")
    S = Y @ Y.T / n
    eigvals = np.sort(np.linalg.eigvalsh(0.5 * (S + S.T)))[::-1]
    sigma0_sq = float(max(np.mean(eigvals[d:]), 0.0))
    _, U = top_eigenvectors(S, d)
    return SubspaceEstimate(U, SubspaceMethod.PPCA, noise_variance=sigma0_sq)


def lag_covariance(Y, lag: int) -> np.ndarray:
    """Σ̂_y(q) = (1/n) Σ_t y_{t+q} y_tᵀ（行は中心化済みとみなす）"""
    Y = _as_y(Y)
    n = Y.shape[1]
    return Y[:, lag:] @ Y[:, :n - lag].T / n


def ly_loadings(Y, d: int, q0: int) -> SubspaceEstimate:
    """M̂ = Σ_{q=1..q0} Σ̂_y(q) Σ̂_y(q)ᵀ の上位 d 固有ベクトル（q0=1: LY1, q0=5: LY5）"""
    Y = _as_y(Y)
    k, n = Y.shape
    if q0 < 1 or q0 >= n:
        raise GPPCAArgumentError(f"lag count q0 must satisfy 1 <= q0 < n={n}, got {q0}")
    if d < 1 or d > k:
        raise GPPCAArgumentError(f"need 1 <= d <= k, got d={d}")
    M_hat = np.zeros((k, k))
    for q in range(1, q0 + 1):
        S = lag_covariance(Y, q)
        M_hat += S @ S.T
    _, U = top_eigenvectors(M_hat, d)
    return SubspaceEstimate(U, SubspaceMethod.LY)


def projected_mean(estimate: SubspaceEstimate, Y) -> np.ndarray:
    """ÂÂᵀY（ベースライン手法の平均推定）"""
    A = estimate.loadings
    return A @ (A.T @ _as_y(Y))
