# mean_design.py
"""
平均構造 (h(x) B)ᵀ の計画行列 H と射影 M = I - H(HᵀH)⁻¹Hᵀ。

基底は列ごとの評価関数 h_j(x, covariates) で与える。
設定ファイルからは {"intercept", "linear_input", "covariate_columns"} で組み立てる。
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from modules.core.linalg import CholeskyFactor, jittered_cholesky, symmetrize
from modules.data.data_models import InputGrid
from modules.utils.errors import GPPCAArgumentError, GPPCANumericError

logger = logging.getLogger(__name__)

# (入力ベクトル, 共変量ベクトル or None) -> 基底関数値
BasisFn = Callable[[np.ndarray, Optional[np.ndarray]], float]

RANK_TOL = 1e-10
DIRECT_COND_LIMIT = 1e8


@dataclass(frozen=True)
class BasisColumn:
    name: str
    fn: BasisFn


@dataclass
class MeanBasis:
    """平均の基底関数 h(x) = (h_1(x), ..., h_q(x))"""
    columns: Tuple[BasisColumn, ...] = ()
    config: Dict[str, Any] = field(default_factory=dict)

    @property
    def q(self) -> int:
        return len(self.columns)

    @property
    def names(self) -> List[str]:
        return [c.name for c in self.columns]

    def evaluate(self, x, covariates=None) -> np.ndarray:
        """1×q の行 h(x)"""
        xv = np.atleast_1d(np.asarray(x, dtype=float))
        cv = None if covariates is None else np.atleast_1d(np.asarray(covariates, dtype=float))
        return np.array([float(c.fn(xv, cv)) for c in self.columns], dtype=float)

    def design_matrix(self, grid: InputGrid) -> np.ndarray:
        H = np.empty((grid.n, self.q))
        for i in range(grid.n):
            cov = None if grid.covariates is None else grid.covariates[i]
            H[i] = self.evaluate(grid.points[i], cov)
        return H

    @classmethod
    def from_config(cls, config: Optional[Dict[str, Any]], covariate_names: Sequence[str] = ()) -> "MeanBasis":
        config = dict(config or {})
        columns: List[BasisColumn] = []
        if config.get("intercept", False):
            columns.append(BasisColumn("intercept", lambda x, c: 1.0))
        if config.get("linear_input", False):
            p = int(config.get("input_dim", 1))
            for m in range(p):
                columns.append(BasisColumn(f"x{m + 1}", lambda x, c, m=m: float(x[m])))
        known = list(covariate_names)
        for name in config.get("covariate_columns", []) or []:
            if name not in known:
                raise GPPCAArgumentError(f"covariate column '{name}' not found (available: {known})")
            j = known.index(name)

            def _cov(x, c, j=j, name=name):
                if c is None:
                    raise GPPCAArgumentError(f"covariate '{name}' required by the mean basis is missing")
                return float(c[j])

            columns.append(BasisColumn(name, _cov))
        return cls(tuple(columns), config)


# ══════════════════════════════════════════════════════════════
# 計画行列と射影
# ══════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class MeanDesign:
    H: np.ndarray
    M: np.ndarray
    hth_inv: np.ndarray
    basis: Optional[MeanBasis] = None

    @property
    def q(self) -> int:
        return int(self.H.shape[1])

    @property
    def n(self) -> int:
        return int(self.H.shape[0])

    def leverage(self, h: np.ndarray) -> float:
        """h (HᵀH)⁻¹ hᵀ"""
        h = np.asarray(h, dtype=float).reshape(-1)
        return float(h @ self.hth_inv @ h)


def design_from_matrix(H: np.ndarray, names: Optional[Sequence[str]] = None, basis: Optional[MeanBasis] = None) -> MeanDesign:
    """計画行列 H から MeanDesign を作る。ランク落ちは列名を添えてエラー"""
    H = np.asarray(H, dtype=float)
    if H.ndim != 2:
        raise GPPCAArgumentError(f"design matrix must be 2-D, got shape {H.shape}")
    n, q = H.shape
    names = list(names) if names is not None else [f"h{j + 1}" for j in range(q)]
    if q >= n:
        raise GPPCAArgumentError(f"mean basis needs q < n, got q={q}, n={n}")
    if not np.all(np.isfinite(H)):
        raise GPPCAArgumentError("design matrix contains non-finite entries")
    if q == 0:
        return MeanDesign(H, np.eye(n), np.zeros((0, 0)), basis)

    _, R, piv = linalg.qr(H, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > RANK_TOL * max(diag[0], 1.0)))
    if rank < q:
        offending = [names[j] for j in piv[rank:]]
        raise GPPCAArgumentError(f"mean basis is rank deficient; offending column(s): {', '.join(offending)}")

    hth_inv = linalg.inv(H.T @ H)
    M = symmetrize(np.eye(n) - H @ hth_inv @ H.T)
    return MeanDesign(H, M, symmetrize(hth_inv), basis)


def build_mean_design(basis: MeanBasis, grid: InputGrid) -> MeanDesign:
    if basis.q >= grid.n:
        raise GPPCAArgumentError(f"mean basis needs q < n, got q={basis.q}, n={grid.n}")
    return design_from_matrix(basis.design_matrix(grid), basis.names, basis)


# ══════════════════════════════════════════════════════════════
# 因子ごとの分解（C = τK + I）
# ══════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class FactorSystem:
    """
    C = τK + I の Cholesky 分解と、平均構造があるときの GLS 補正。

      P = C⁻¹ - C⁻¹H (HᵀC⁻¹H)⁻¹ HᵀC⁻¹     （H がなければ P = C⁻¹）

    すると M(M + τ⁻¹K⁻¹)⁻¹M = M - P となり K⁻¹ は不要。
    """
    chol: CholeskyFactor
    tau: float
    K: np.ndarray
    design: Optional[MeanDesign] = None
    gls_chol: Optional[CholeskyFactor] = None   # HᵀC⁻¹H の分解
    half_H: Optional[np.ndarray] = None         # L⁻¹H

    @property
    def logdet(self) -> float:
        """log|C| (+ log|HᵀC⁻¹H|)"""
        value = self.chol.logdet()
        if self.gls_chol is not None:
            value += self.gls_chol.logdet()
        return value

    def apply_P(self, B: np.ndarray) -> np.ndarray:
        """P B"""
        out = self.chol.solve(B)
        if self.gls_chol is not None and self.design is not None:
            H = self.design.H
            out = out - self.chol.solve(H @ self.gls_chol.solve(H.T @ out))
        return out

    def quad_P(self, Y: np.ndarray) -> np.ndarray:
        """Y P Yᵀ（k×k）"""
        V = self.chol.half_solve(Y.T)
        S = V.T @ V
        if self.gls_chol is not None and self.half_H is not None:
            UtV = self.half_H.T @ V
            S = S - UtV.T @ self.gls_chol.solve(UtV)
        return symmetrize(S)

    def smoother(self) -> np.ndarray:
        """M - P（H がなければ I - C⁻¹）。n×n を明示的に作るので検証・小規模用"""
        n = self.K.shape[0]
        M = np.eye(n) if self.design is None else self.design.M
        return symmetrize(M - self.apply_P(np.eye(n)))


def factor_system(K: np.ndarray, tau: float, design: Optional[MeanDesign] = None, label: str = "tau*K + I") -> FactorSystem:
    K = np.asarray(K, dtype=float)
    n = K.shape[0]
    params = {"tau": tau}
    if not np.isfinite(tau) or tau < 0.0:
        raise GPPCANumericError("tau must be finite and non-negative", params=params)
    chol = jittered_cholesky(tau * K + np.eye(n), label=label, params=params)
    if design is None or design.q == 0:
        return FactorSystem(chol, float(tau), K, design)
    half_H = chol.half_solve(design.H)
    gls_chol = jittered_cholesky(half_H.T @ half_H, label="H^T C^-1 H", params=params)
    return FactorSystem(chol, float(tau), K, design, gls_chol, half_H)


def residual_smoother(K: np.ndarray, tau: float, design: Optional[MeanDesign] = None, method: str = "direct") -> np.ndarray:
    """
    M(M + τ⁻¹K⁻¹)⁻¹M（design なしなら (I + τ⁻¹K⁻¹)⁻¹）。

    method="direct" は K の分解から直接組み立て、分解できなければ
    K⁻¹ を使わない GLS 形 (M - P) に切り替える。
    """
    K = np.asarray(K, dtype=float)
    n = K.shape[0]
    M = np.eye(n) if design is None else design.M
    if method == "direct":
        try:
            if np.linalg.cond(K) > DIRECT_COND_LIMIT:
                raise linalg.LinAlgError(f"K is ill-conditioned (cond > {DIRECT_COND_LIMIT:.0e})")
            K_chol = linalg.cholesky(K, lower=True, check_finite=False)
            K_inv = linalg.cho_solve((K_chol, True), np.eye(n), check_finite=False)
            inner = jittered_cholesky(M + K_inv / tau, label="M + K^-1/tau")
            return symmetrize(M @ inner.solve(M))
        except (linalg.LinAlgError, GPPCANumericError) as e:
            logger.warning(f"[Mean] direct residual smoother failed ({e}); using the GLS form")
    elif method != "gls":
        raise GPPCAArgumentError(f"unknown smoother method '{method}'")
    return factor_system(K, tau, design).smoother()


def design_for(mean_basis: Optional[Dict[str, Any]], grid: InputGrid) -> Optional[MeanDesign]:
    """設定の mean_basis から MeanDesign を作る。基底が空なら None（平均構造なし）"""
    if not mean_basis:
        return None
    config = dict(mean_basis)
    config.setdefault("input_dim", grid.p)
    basis = MeanBasis.from_config(config, grid.covariate_names)
    if basis.q == 0:
        return None
    return build_mean_design(basis, grid)
