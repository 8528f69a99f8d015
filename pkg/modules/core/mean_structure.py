# mean_structure.py
"""
平均構造つきモデル  y(x) = (h(x) B)ᵀ + A z(x) + ε。

B に平坦事前分布 π(B) ∝ 1 を置いて積分すると、
  S²_M = tr(Y M Yᵀ) - Σ_l a_lᵀ Y M (M + τ_l⁻¹ K_l⁻¹)⁻¹ M Yᵀ a_l
  σ̂₀²  = S²_M / (k (n - q))
q = 0（基底なし）は平均構造なしのモデルと一致する。
"""

from __future__ import annotations

import logging
from typing import Optional, Sequence

import numpy as np

from modules.core import gppca_core
from modules.core.linalg import top_eigenvectors
from modules.core.mean_design import MeanDesign, factor_system, residual_smoother
from modules.core.stiefel_opt import StiefelOptions, optimize_on_stiefel
from modules.data.data_models import LoadingMatrix, OutputMatrix
from modules.utils.config_handler import FitConfig
from modules.utils.errors import GPPCAArgumentError

logger = logging.getLogger(__name__)


def _q(design: Optional[MeanDesign]) -> int:
    return 0 if design is None else design.q


def noise_variance_mean(Y, A, K_list: Sequence[np.ndarray], taus: Sequence[float], design: Optional[MeanDesign]) -> float:
    """σ̂₀² = S²_M / (k (n - q))"""
    Yv = gppca_core._values(Y)
    A = gppca_core._loading_values(A)
    k, n = Yv.shape
    if len(K_list) != A.shape[1] or len(taus) != A.shape[1]:
        raise GPPCAArgumentError("K_list and taus need one entry per loading column")
    M = np.eye(n) if design is None else design.M
    total = float(np.trace(Yv @ M @ Yv.T))
    explained = 0.0
    for l in range(A.shape[1]):
        S = residual_smoother(K_list[l], float(taus[l]), design)
        v = Yv.T @ A[:, l]
        explained += float(v @ S @ v)
    s2 = total - explained
    if s2 < -1e-10 * max(total, 1.0):
        logger.warning(f"[Mean] S^2_M is negative ({s2:.3e}); clamped to 0")
    return max(s2, 0.0) / (k * (n - _q(design)))


def profile_log_likelihood_mean(Y: OutputMatrix, taus, gammas, design: Optional[MeanDesign], config: FitConfig) -> float:
    """
    -1/2 Σ_l [log|τ_l K_l + I| + log|Hᵀ(τ_l K_l + I)⁻¹H|] - (k(n-q)/2) log S²_M
    """
    return gppca_core.profile_log_likelihood(Y, taus, gammas, config, design)


def estimate_loadings_mean(
    Y,
    sigmas: Sequence[np.ndarray],
    sigma0_sq: float,
    design: Optional[MeanDesign],
    init: Optional[np.ndarray] = None,
    opts: Optional[StiefelOptions] = None,
) -> LoadingMatrix:
    """
    Σ_l a_lᵀ G_{l,M} a_l を Stiefel 多様体上で最大化する。
    Σ_l がすべて等しければ G_M の固有分解で閉形式に解く。
    """
    Yv = gppca_core._values(Y)
    k = Yv.shape[0]
    d = len(sigmas)
    if d < 1 or d > k:
        raise GPPCAArgumentError(f"need 1 <= d <= k, got d={d}, k={k}")
    if not sigma0_sq > 0.0:
        raise GPPCAArgumentError(f"sigma0_sq must be positive, got {sigma0_sq}")

    # Σ_l/σ₀² + I = τ_l K_l + I なので τ = 1, K = Σ_l/σ₀² として同じ分解を使う
    systems = []
    seen = []
    for S in sigmas:
        S = np.asarray(S, dtype=float)
        for prev_S, prev_sys in seen:
            if np.array_equal(prev_S, S):
                systems.append(prev_sys)
                break
        else:
            sys = factor_system(S / sigma0_sq, 1.0, design)
            seen.append((S, sys))
            systems.append(sys)
    G_list = gppca_core.gram_matrices(Yv, systems)

    if len(seen) == 1:
        _, A = top_eigenvectors(G_list[0], d)
        return LoadingMatrix(A)

    if init is None:
        base = gppca_core._residual_gram(Yv, design)
        _, init = top_eigenvectors(base, d)

    def fun(A):
        return gppca_core.stiefel_objective(A, G_list), gppca_core.stiefel_gradient(A, G_list)

    A, report = optimize_on_stiefel(fun, np.asarray(init, dtype=float), opts)
    if not report.converged:
        logger.warning(f"[Mean] Stiefel solve did not converge: {report.message}")
    return LoadingMatrix(A)


def factor_posterior_mean(model: "gppca_core.FittedModel") -> np.ndarray:
    """
    d×n の Ẑ（平均構造があれば B を積分した Ẑ_M）。第 l 行 = (τ_l K_l P_l Yᵀ â_l)ᵀ
    """
    W = model.factor_weights
    Z = np.empty((model.d, model.n))
    for l, sys in enumerate(model.systems):
        Z[l] = sys.tau * (sys.K @ W[:, l])
    return Z


def regression_posterior_mean(model: "gppca_core.FittedModel") -> np.ndarray:
    """B̂ = (HᵀH)⁻¹Hᵀ (Y - Â Ẑ_M)ᵀ   (q×k)"""
    if not model.has_mean or model.design is None:
        raise GPPCAArgumentError("regression coefficients need a model fitted with a mean basis")
    Z = factor_posterior_mean(model)
    resid = model.data.values - model.loadings.values @ Z
    H = model.design.H
    return model.design.hth_inv @ (H.T @ resid.T)
