# gppca_core.py
"""
GPPCA の周辺尤度と因子負荷の推定。

モデル: y(x) = A z(x) + ε,  AᵀA = I_d,  Z_l ~ GP(0, σ_l² K_l),  ε ~ N(0, σ₀² I_k)

τ_l = σ_l²/σ₀² とおくと、C_l = τ_l K_l + I として
  G_l  = Y (I - C_l⁻¹) Yᵀ
  S²   = tr(YᵀY) - Σ_l a_lᵀ G_l a_l
  σ̂₀²  = S² / (nk)
  ℓ(τ, γ) = -1/2 Σ_l log|C_l| - (nk/2) log S²
平均構造がある場合は mean_design.FactorSystem が M と GLS 補正を受け持ち、
同じコードパスで q > 0 を扱う（n は n - q に置き換わる）。

(τ, γ) の勾配は Â(θ) を固定した中心差分（包絡線定理）。
内側の Stiefel 解の揺れが数値勾配に混ざらない。
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import optimize

from modules.core.kernels import build_correlation_matrix
from modules.core.linalg import jittered_cholesky, random_stiefel, sign_normalize, symmetrize, top_eigenvectors
from modules.core.mean_design import FactorSystem, MeanDesign, design_for, factor_system
from modules.core.stiefel_opt import StiefelReport, optimize_on_stiefel, optimize_on_stiefel_multistart
from modules.data.data_models import (
    HyperParams,
    InputGrid,
    KernelSpec,
    LoadingMatrix,
    OutputMatrix,
)
from modules.utils.config_handler import FitConfig
from modules.utils.errors import GPPCAArgumentError, GPPCANumericError

logger = logging.getLogger(__name__)

DENSE_ORACLE_LIMIT = 2000
LOG_TAU_BOUNDS = (np.log(1e-10), np.log(1e10))
LOG_GAMMA_SPAN = (np.log(1e-4), np.log(1e3))   # grid diameter に対する倍率
S2_FLOOR = 1e-14

ArrayLike = Union[np.ndarray, OutputMatrix]


def _values(Y: ArrayLike) -> np.ndarray:
    if isinstance(Y, OutputMatrix):
        return Y.values
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2:
        raise GPPCAArgumentError(f"Y must be a k x n matrix, got shape {Y.shape}")
    return Y


def _loading_values(A) -> np.ndarray:
    return A.values if isinstance(A, LoadingMatrix) else np.asarray(A, dtype=float)


# ══════════════════════════════════════════════════════════════
# 密な nk×nk 表現（検証用）
# ══════════════════════════════════════════════════════════════

def _dense_guard(n: int, k: int) -> None:
    if n * k > DENSE_ORACLE_LIMIT:
        raise GPPCAArgumentError(
            f"dense nk x nk form refused for nk={n * k} (limit {DENSE_ORACLE_LIMIT}); use the factorized path"
        )


def joint_covariance_direct(A, sigmas: Sequence[np.ndarray], sigma0_sq: float) -> np.ndarray:
    """vec(Y)（列方向に積む）の共分散 Σ_l Σ_l ⊗ a_l a_lᵀ + σ₀² I_nk"""
    A = _loading_values(A)
    k, d = A.shape
    if len(sigmas) != d:
        raise GPPCAArgumentError(f"expected {d} covariance matrices, got {len(sigmas)}")
    n = np.asarray(sigmas[0]).shape[0] if d else 0
    if d == 0:
        raise GPPCAArgumentError("cannot infer n without covariance matrices")
    _dense_guard(n, k)
    out = sigma0_sq * np.eye(n * k)
    for l in range(d):
        a = A[:, l:l + 1]
        out += np.kron(np.asarray(sigmas[l], dtype=float), a @ a.T)
    return symmetrize(out)


def joint_precision_closed_form(A, sigmas: Sequence[np.ndarray], sigma0_sq: float, n: Optional[int] = None) -> np.ndarray:
    """
    σ₀⁻² (I_nk - Σ_l (σ₀² Σ_l⁻¹ + I_n)⁻¹ ⊗ a_l a_lᵀ)
    (σ₀² Σ⁻¹ + I)⁻¹ = I - σ₀² (Σ + σ₀² I)⁻¹ なので Σ_l の逆行列は作らない。
    """
    A = _loading_values(A)
    k, d = A.shape
    if not sigma0_sq > 0.0:
        raise GPPCAArgumentError(f"closed-form precision needs sigma0_sq > 0, got {sigma0_sq}")
    if d:
        n = np.asarray(sigmas[0]).shape[0]
    elif n is None:
        raise GPPCAArgumentError("n must be given when there are no factors")
    _dense_guard(n, k)
    out = np.eye(n * k)
    for l in range(d):
        S = np.asarray(sigmas[l], dtype=float)
        chol = jittered_cholesky(S + sigma0_sq * np.eye(n), label=f"Sigma_{l + 1} + sigma0^2 I")
        D = np.eye(n) - sigma0_sq * chol.inverse()
        a = A[:, l:l + 1]
        out -= np.kron(symmetrize(D), a @ a.T)
    return symmetrize(out / sigma0_sq)


# ══════════════════════════════════════════════════════════════
# 目的関数
# ══════════════════════════════════════════════════════════════

def stiefel_objective(A, G_list: Sequence[np.ndarray]) -> float:
    """Σ_l a_lᵀ G_l a_l"""
    A = _loading_values(A)
    if len(G_list) != A.shape[1]:
        raise GPPCAArgumentError(f"expected {A.shape[1]} G matrices, got {len(G_list)}")
    return float(sum(A[:, l] @ G_list[l] @ A[:, l] for l in range(A.shape[1])))


def stiefel_gradient(A, G_list: Sequence[np.ndarray]) -> np.ndarray:
    """ユークリッド勾配。第 l 列 = 2 G_l a_l"""
    A = _loading_values(A)
    if len(G_list) != A.shape[1]:
        raise GPPCAArgumentError(f"expected {A.shape[1]} G matrices, got {len(G_list)}")
    grad = np.empty_like(A)
    for l in range(A.shape[1]):
        grad[:, l] = 2.0 * (G_list[l] @ A[:, l])
    return grad


def gram_matrices(Y: ArrayLike, systems: Sequence[FactorSystem]) -> List[np.ndarray]:
    """G_l = Y M Yᵀ - Y P_l Yᵀ（M = I なら Y (I - C_l⁻¹) Yᵀ）"""
    Yv = _values(Y)
    base = _residual_gram(Yv, systems[0].design if systems else None)
    cache: Dict[int, np.ndarray] = {}
    out = []
    for s in systems:
        key = id(s)
        if key not in cache:
            cache[key] = symmetrize(base - s.quad_P(Yv))
        out.append(cache[key])
    return out


def _residual_gram(Yv: np.ndarray, design: Optional[MeanDesign]) -> np.ndarray:
    if design is None or design.q == 0:
        return Yv @ Yv.T
    return symmetrize(Yv @ design.M @ Yv.T)


def _systems_for(K_list: Sequence[np.ndarray], taus: Sequence[float], design: Optional[MeanDesign] = None) -> List[FactorSystem]:
    if len(K_list) != len(taus):
        raise GPPCAArgumentError("K_list and taus must have the same length")
    return [factor_system(K, float(t), design) for K, t in zip(K_list, taus)]


def estimate_loadings_shared(Y: ArrayLike, K: np.ndarray, tau: float, sigma0_sq: float, d: int) -> LoadingMatrix:
    """
    共通共分散の閉形式解: G = Y((τK)⁻¹ + I)⁻¹Yᵀ の上位 d 固有ベクトル（R = I、符号規約つき）。
    σ₀² は τ パラメータ化では G に現れないが正値を要求する。
    """
    Yv = _values(Y)
    k = Yv.shape[0]
    if d > k or d < 1:
        raise GPPCAArgumentError(f"need 1 <= d <= k, got d={d}, k={k}")
    if not tau > 0.0 or not sigma0_sq > 0.0:
        raise GPPCAArgumentError(f"tau and sigma0_sq must be positive, got tau={tau}, sigma0_sq={sigma0_sq}")
    G = gram_matrices(Yv, [factor_system(K, tau)])[0]
    _, U = top_eigenvectors(G, d)
    return LoadingMatrix(U)


def estimate_noise_variance(Y: ArrayLike, A, K_list: Sequence[np.ndarray], taus: Sequence[float]) -> float:
    """σ̂₀² = Ŝ²/(nk)"""
    Yv = _values(Y)
    A = _loading_values(A)
    k, n = Yv.shape
    G_list = gram_matrices(Yv, _systems_for(K_list, taus))
    s2 = _residual_sum_of_squares(float(np.sum(Yv * Yv)), A, G_list)
    return s2 / (n * k)


def _residual_sum_of_squares(total: float, A: np.ndarray, G_list: Sequence[np.ndarray]) -> float:
    s2 = total - stiefel_objective(A, G_list)
    if s2 < -1e-10 * max(total, 1.0):
        raise GPPCANumericError(f"residual sum of squares is negative ({s2:.3e})")
    return max(s2, 0.0)


def _log_density(total: float, A: np.ndarray, systems: Sequence[FactorSystem], G_list, k: int, dof: int,
                 fixed_noise: Optional[float]) -> Tuple[float, float]:
    """(対数尤度, S²) を返す。fixed_noise なら厳密な対数密度、そうでなければプロファイル"""
    s2 = _residual_sum_of_squares(total, A, G_list)
    logdet = float(sum(s.logdet for s in systems))
    if fixed_noise is not None:
        value = -0.5 * k * dof * np.log(2.0 * np.pi * fixed_noise) - 0.5 * logdet - s2 / (2.0 * fixed_noise)
    else:
        value = -0.5 * logdet - 0.5 * k * dof * np.log(max(s2, S2_FLOOR * max(total, 1.0)))
    return float(value), s2


# ══════════════════════════════════════════════════════════════
# 適合済みモデル
# ══════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class FittedModel:
    """推定結果と因子ごとの分解キャッシュ（構築後は不変）"""
    loadings: LoadingMatrix
    hyper: HyperParams
    grid: InputGrid
    data: OutputMatrix
    systems: Tuple[FactorSystem, ...]
    design: Optional[MeanDesign] = None
    mean_basis_config: Optional[Dict[str, Any]] = None
    log_likelihood: float = float("nan")
    converged: bool = True
    n_iter: int = 0
    message: str = ""
    fit_seconds: float = 0.0
    extra: Dict[str, Any] = field(default_factory=dict)

    @property
    def k(self) -> int:
        return self.data.k

    @property
    def n(self) -> int:
        return self.data.n

    @property
    def d(self) -> int:
        return self.loadings.d

    @property
    def has_mean(self) -> bool:
        return self.design is not None and self.design.q > 0

    def covariance_matrices(self) -> List[np.ndarray]:
        """Σ̂_l = σ̂_l² K̂_l"""
        return [s2 * sys.K for s2, sys in zip(self.hyper.sigmas_sq, self.systems)]

    @cached_property
    def factor_weights(self) -> np.ndarray:
        """n×d 行列。第 l 列 = P_l Yᵀ â_l（P_l は C_l⁻¹ または GLS 版）"""
        Yv = self.data.values
        A = self.loadings.values
        W = np.empty((self.n, self.d))
        for l, sys in enumerate(self.systems):
            W[:, l] = sys.apply_P(Yv.T @ A[:, l])
        return W

    def to_dict(self) -> Dict[str, Any]:
        return {
            "loadings": self.loadings.values.tolist(),
            "hyper": self.hyper.to_dict(),
            "grid": self.grid.to_dict(),
            "data": self.data.values.tolist(),
            "mean_basis": self.mean_basis_config,
            "log_likelihood": self.log_likelihood,
            "converged": self.converged,
            "n_iter": self.n_iter,
            "message": self.message,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FittedModel":
        grid = InputGrid.from_dict(data["grid"])
        Y = OutputMatrix(np.asarray(data["data"], dtype=float), grid)
        design = design_for(data.get("mean_basis"), grid)
        return build_fitted_model(
            Y,
            LoadingMatrix(np.asarray(data["loadings"], dtype=float)),
            HyperParams.from_dict(data["hyper"]),
            design=design,
            mean_basis_config=data.get("mean_basis"),
            log_likelihood=float(data.get("log_likelihood", float("nan"))),
            converged=bool(data.get("converged", True)),
            n_iter=int(data.get("n_iter", 0)),
            message=str(data.get("message", "")),
        )


def build_fitted_model(
    Y: OutputMatrix,
    loadings: LoadingMatrix,
    hyper: HyperParams,
    design: Optional[MeanDesign] = None,
    **meta: Any,
) -> FittedModel:
    """与えられたパラメータから分解キャッシュつきの FittedModel を作る"""
    if loadings.k != Y.k:
        raise GPPCAArgumentError(f"loadings have {loadings.k} rows but Y has {Y.k}")
    if loadings.d != hyper.d:
        raise GPPCAArgumentError(f"loadings have {loadings.d} columns but hyper has {hyper.d} factors")
    if design is not None and design.n != Y.n:
        raise GPPCAArgumentError("mean design does not match the number of inputs")
    systems: List[FactorSystem] = []
    cache: Dict[Tuple[KernelSpec, float], FactorSystem] = {}
    for spec, tau in zip(hyper.kernel_specs, hyper.taus):
        key = (spec, tau)
        if key not in cache:
            cache[key] = factor_system(build_correlation_matrix(spec, Y.grid), tau, design)
        systems.append(cache[key])
    return FittedModel(loadings, hyper, Y.grid, Y, tuple(systems), design, **meta)


# ══════════════════════════════════════════════════════════════
# プロファイル尤度の評価器
# ══════════════════════════════════════════════════════════════

class ProfileEvaluator:
    """
    θ = (log τ, log γ) からプロファイル尤度を評価する。
    共通共分散: θ = [log τ, log γ_1..p]
    個別共分散: θ = [log τ_1, log γ_11..1p, log τ_2, ...]
    """

    def __init__(self, Y: OutputMatrix, config: FitConfig, design: Optional[MeanDesign] = None):
        self.Y = Y
        self.Yv = Y.values
        self.grid = Y.grid
        self.config = config
        self.design = design
        self.k, self.n = self.Yv.shape
        self.d = int(config.n_factors)
        self.p = self.grid.p
        self.shared = bool(config.shared_covariance)
        self.fixed_noise = config.fixed_noise
        q = 0 if design is None else design.q
        self.dof = self.n - q
        if self.d > self.k:
            raise GPPCAArgumentError(f"n_factors={self.d} exceeds the number of output rows k={self.k}")
        if self.dof < 1:
            raise GPPCAArgumentError(f"need n > q, got n={self.n}, q={q}")
        self.base_gram = _residual_gram(self.Yv, design)
        self.total = float(np.trace(self.base_gram))
        if not self.total > 1e-300 or not np.isfinite(self.total):
            raise GPPCAArgumentError("output matrix has zero (residual) variance; nothing to fit")
        _, self.pca_init = top_eigenvectors(self.base_gram, self.d)
        self.warm = self.pca_init.copy()
        self._rng = np.random.Generator(np.random.Philox(int(config.seed)))
        self.last_report: Optional[StiefelReport] = None

    # --- パラメータ変換 ---

    @property
    def block(self) -> int:
        return 1 + self.p

    @property
    def n_params(self) -> int:
        return self.block if self.shared else self.block * self.d

    def pack(self, taus, gammas) -> np.ndarray:
        taus = np.asarray(taus, dtype=float).reshape(-1)
        if taus.size == 1:
            taus = np.full(self.d, taus[0])
        elif taus.size != self.d:
            raise GPPCAArgumentError(f"expected 1 or {self.d} tau values, got {taus.size}")
        g = np.asarray(gammas, dtype=float)
        if g.size == 1:
            g = np.full((self.d, self.p), float(g.reshape(-1)[0]))
        elif g.size == self.p:
            g = np.tile(g.reshape(1, self.p), (self.d, 1))
        elif g.size == self.d * self.p:
            g = g.reshape(self.d, self.p)
        else:
            raise GPPCAArgumentError(f"gammas must have 1, {self.p} or {self.d * self.p} entries")
        if np.any(taus <= 0.0) or np.any(g <= 0.0):
            raise GPPCAArgumentError("taus and gammas must be positive")
        if self.shared:
            return np.concatenate([[np.log(taus[0])], np.log(g[0])])
        return np.concatenate([np.concatenate([[np.log(taus[l])], np.log(g[l])]) for l in range(self.d)])

    def unpack(self, theta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        theta = np.asarray(theta, dtype=float)
        if self.shared:
            taus = np.full(self.d, np.exp(theta[0]))
            gammas = np.tile(np.exp(theta[1:self.block]), (self.d, 1))
        else:
            blocks = theta.reshape(self.d, self.block)
            taus = np.exp(blocks[:, 0])
            gammas = np.exp(blocks[:, 1:])
        return taus, gammas

    def initial_theta(self) -> np.ndarray:
        tau0 = float(self.config.initial_tau)
        if self.config.initial_gamma is not None:
            gamma0 = np.asarray(self.config.initial_gamma, dtype=float)
        else:
            gamma0 = self.grid.diameter() / 2.0
        return self.pack(tau0, gamma0)

    def bounds(self) -> List[Tuple[float, float]]:
        log_diam = np.log(self.grid.diameter())
        block = [LOG_TAU_BOUNDS] + [(float(ld + LOG_GAMMA_SPAN[0]), float(ld + LOG_GAMMA_SPAN[1])) for ld in log_diam]
        return block if self.shared else block * self.d

    # --- 評価 ---

    def kernel_specs(self, gammas: np.ndarray) -> List[KernelSpec]:
        return [KernelSpec(self.config.kernel, tuple(gammas[l])) for l in range(self.d)]

    def factor_system_for(self, tau: float, gamma: np.ndarray) -> FactorSystem:
        K = build_correlation_matrix(KernelSpec(self.config.kernel, tuple(gamma)), self.grid)
        return factor_system(K, float(tau), self.design)

    def systems(self, theta: np.ndarray) -> List[FactorSystem]:
        taus, gammas = self.unpack(theta)
        if self.shared:
            sys = self.factor_system_for(taus[0], gammas[0])
            return [sys] * self.d
        return [self.factor_system_for(taus[l], gammas[l]) for l in range(self.d)]

    def grams(self, systems: Sequence[FactorSystem]) -> List[np.ndarray]:
        cache: Dict[int, np.ndarray] = {}
        out = []
        for s in systems:
            if id(s) not in cache:
                cache[id(s)] = symmetrize(self.base_gram - s.quad_P(self.Yv))
            out.append(cache[id(s)])
        return out

    def solve_loadings(self, G_list: Sequence[np.ndarray], multi_start: bool = False) -> np.ndarray:
        if self.shared:
            _, A = top_eigenvectors(G_list[0], self.d)
            return A

        def fun(A):
            return stiefel_objective(A, G_list), stiefel_gradient(A, G_list)

        opts = self.config.stiefel
        if multi_start:
            starts = [self.warm, self.pca_init]
            starts += [random_stiefel(self.k, self.d, self._rng) for _ in range(max(opts.n_starts - 2, 0))]
            A, report = optimize_on_stiefel_multistart(fun, starts, opts)
        else:
            A, report = optimize_on_stiefel(fun, self.warm, opts)
        self.last_report = report
        if not report.converged:
            logger.debug(f"[Fit] Stiefel solve stopped: {report.message} (grad={report.grad_norm:.3e})")
        self.warm = A
        return sign_normalize(A)

    def value_at(self, systems: Sequence[FactorSystem], G_list, A: np.ndarray) -> Tuple[float, float]:
        return _log_density(self.total, A, systems, G_list, self.k, self.dof, self.fixed_noise)

    def evaluate(self, theta: np.ndarray, multi_start: bool = False):
        """(対数尤度, Â, systems, S²)"""
        systems = self.systems(theta)
        G_list = self.grams(systems)
        A = self.solve_loadings(G_list, multi_start=multi_start)
        value, s2 = self.value_at(systems, G_list, A)
        if not np.isfinite(value):
            taus, gammas = self.unpack(theta)
            raise GPPCANumericError(
                "profile log-likelihood is not finite",
                params={"taus": taus.tolist(), "gammas": gammas.tolist()},
            )
        return value, A, systems, s2

    def gradient(self, theta: np.ndarray, A: np.ndarray, systems: List[FactorSystem], h: float) -> np.ndarray:
        """Â を固定した中心差分"""
        grad = np.zeros_like(theta)
        for j in range(theta.size):
            vals = []
            for sign in (1.0, -1.0):
                t = theta.copy()
                t[j] += sign * h
                if self.shared:
                    trial = self.systems(t)
                else:
                    l = j // self.block
                    taus, gammas = self.unpack(t)
                    trial = list(systems)
                    trial[l] = self.factor_system_for(taus[l], gammas[l])
                vals.append(self.value_at(trial, self.grams(trial), A)[0])
            grad[j] = (vals[0] - vals[1]) / (2.0 * h)
        return grad


# ══════════════════════════════════════════════════════════════
# 公開 API
# ══════════════════════════════════════════════════════════════

def _basis_config(config: FitConfig, design: Optional[MeanDesign]) -> Optional[Dict[str, Any]]:
    if design is None or design.q == 0:
        return None
    if config.has_mean and config.mean_basis:
        return dict(config.mean_basis)
    if design.basis is not None and design.basis.config:
        return dict(design.basis.config)
    # 任意の関数で与えた基底は保存できない
    logger.warning("[Fit] mean basis was given as custom callables; it will not be serialized")
    return None


def profile_log_likelihood(Y: OutputMatrix, taus, gammas, config: FitConfig, design: Optional[MeanDesign] = None) -> float:
    """(τ, γ) におけるプロファイル対数尤度（Â と σ̂₀² を代入済み）"""
    evaluator = ProfileEvaluator(Y, config, design)
    value, _, _, _ = evaluator.evaluate(evaluator.pack(taus, gammas))
    return value


def fit(Y: OutputMatrix, config: FitConfig, design: Optional[MeanDesign] = None) -> FittedModel:
    """
    (log τ, log γ) 上の L-BFGS-B でプロファイル尤度を最大化する。
    design を省略すると config.mean_basis から組み立てる（空なら平均構造なし）。
    """
    started = time.perf_counter()
    if design is None and config.has_mean:
        design = design_for(config.mean_basis, Y.grid)
    evaluator = ProfileEvaluator(Y, config, design)
    theta0 = evaluator.initial_theta()
    h = float(config.fd_step)
    best: Dict[str, Any] = {"value": -np.inf, "theta": theta0, "A": evaluator.pca_init}

    def objective(theta):
        value, A, systems, _ = evaluator.evaluate(theta)
        grad = evaluator.gradient(theta, A, systems, h)
        if value > best["value"]:
            best.update(value=value, theta=np.array(theta, copy=True), A=A)
        return -value, -grad

    logger.info(
        f"[Fit] k={evaluator.k} n={evaluator.n} d={evaluator.d} kernel={config.kernel.value} "
        f"shared={evaluator.shared} fixed_noise={config.fixed_noise} q={evaluator.n - evaluator.dof}"
    )
    try:
        result = optimize.minimize(
            objective,
            theta0,
            jac=True,
            method="L-BFGS-B",
            bounds=evaluator.bounds(),
            options={"maxiter": int(config.max_iter), "ftol": float(config.ftol)},
        )
        converged, n_iter, message = bool(result.success), int(result.nit), str(result.message)
    except GPPCANumericError as e:
        if not np.isfinite(best["value"]):
            raise
        logger.warning(f"[Fit] optimizer aborted ({e}); returning best iterate")
        converged, n_iter, message = False, 0, str(e)

    theta = best["theta"]
    multi = (not evaluator.shared) and config.stiefel_policy == "multi_start"
    if multi:
        evaluator.warm = best["A"]
    value, A, systems, s2 = evaluator.evaluate(theta, multi_start=multi)
    if not converged:
        logger.warning(f"[Fit] did not converge after {n_iter} iterations: {message}")

    taus, gammas = evaluator.unpack(theta)
    sigma0_sq = config.fixed_noise if config.fixed_noise is not None else s2 / (evaluator.k * evaluator.dof)
    if not sigma0_sq > 0.0:
        raise GPPCANumericError(
            "estimated noise variance is zero; the data are exactly low rank",
            params={"taus": taus.tolist()},
            advice="set fixed_noise to a small positive value",
        )
    hyper = HyperParams(
        sigma0_sq=sigma0_sq,
        taus=tuple(taus),
        kernel_specs=tuple(evaluator.kernel_specs(gammas)),
        shared_covariance=evaluator.shared,
        fixed_noise=config.fixed_noise,
    )
    elapsed = time.perf_counter() - started
    logger.info(
        f"[Fit] done: loglik={value:.6g} sigma0^2={sigma0_sq:.4g} taus={np.round(taus, 4).tolist()} "
        f"iters={n_iter} converged={converged} ({elapsed:.2f}s)"
    )
    return build_fitted_model(
        Y,
        LoadingMatrix(A),
        hyper,
        design=design,
        mean_basis_config=_basis_config(config, design),
        log_likelihood=value,
        converged=converged,
        n_iter=n_iter,
        message=message,
        fit_seconds=elapsed,
    )
