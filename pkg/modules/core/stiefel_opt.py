# stiefel_opt.py
"""
Stiefel 多様体 {A : AᵀA = I_d} 上の曲線探索（Cayley 変換）による最大化。

  W    = G Xᵀ - X Gᵀ                         (G: 最小化側のユークリッド勾配)
  Y(t) = (I + t/2 W)⁻¹ (I - t/2 W) X

2d < k のときは U = [G, X], V = [X, -G] による 2d×2d の低ランク形で解く。
ステップ幅は Barzilai-Borwein 初期値 + Armijo バックトラック。
受理したステップで目的関数は単調に増加する。
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Dict, Any, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from modules.data.data_models import orthonormality_defect
from modules.utils.errors import GPPCAArgumentError, GPPCANumericError

logger = logging.getLogger(__name__)

# A -> (目的関数値, ユークリッド勾配)。最大化する。
ObjectiveFn = Callable[[np.ndarray], Tuple[float, np.ndarray]]

REORTHO_TOL = 1e-12
MIN_STEP = 1e-20
MAX_STEP = 1e20


@dataclass(frozen=True)
class StiefelOptions:
    max_iters: int = 500
    grad_tol: float = 1e-6
    initial_step: float = 1e-3
    armijo_rho: float = 0.5
    armijo_c: float = 1e-4
    bb_steps: bool = True
    max_backtracks: int = 40
    n_starts: int = 5

    def __post_init__(self):
        if int(self.max_iters) < 1:
            raise GPPCAArgumentError(f"max_iters must be positive, got {self.max_iters}")
        if not self.grad_tol > 0.0:
            raise GPPCAArgumentError(f"grad_tol must be positive, got {self.grad_tol}")
        if not self.initial_step > 0.0:
            raise GPPCAArgumentError(f"initial_step must be positive, got {self.initial_step}")
        for name in ("armijo_rho", "armijo_c"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise GPPCAArgumentError(f"{name} must lie in (0, 1), got {value}")
        if int(self.max_backtracks) < 1 or int(self.n_starts) < 1:
            raise GPPCAArgumentError("max_backtracks and n_starts must be positive")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "StiefelOptions":
        valid_keys = cls.__dataclass_fields__.keys()
        return cls(**{k: v for k, v in data.items() if k in valid_keys})


@dataclass
class StiefelReport:
    iterations: int
    grad_norm: float
    converged: bool
    objective: float
    evaluations: int = 0
    max_defect: float = 0.0
    message: str = ""
    start_index: int = 0


# ══════════════════════════════════════════════════════════════
# Cayley 変換
# ══════════════════════════════════════════════════════════════

def cayley_retraction(A: np.ndarray, W: np.ndarray, step: float) -> np.ndarray:
    """
    (I + step/2 W)⁻¹ (I - step/2 W) A。step = 0 なら A をそのまま返す。
    I + step/2 W が特異なら LinAlgError（呼び出し側でステップを縮める）。
    """
    A = np.asarray(A, dtype=float)
    W = np.asarray(W, dtype=float)
    k = A.shape[0]
    if W.shape != (k, k):
        raise GPPCAArgumentError(f"W must be {k}x{k}, got {W.shape}")
    scale = max(1.0, float(np.max(np.abs(W), initial=0.0)))
    if np.max(np.abs(W + W.T), initial=0.0) > 1e-10 * scale:
        raise GPPCAArgumentError("W must be skew-symmetric")
    if step == 0.0:
        return A
    half = 0.5 * step * W
    eye = np.eye(k)
    return linalg.solve(eye + half, (eye - half) @ A)


def _lowrank_retraction(X: np.ndarray, G: np.ndarray, step: float) -> np.ndarray:
    """W = U Vᵀ (U = [G, X], V = [X, -G]) を使った Sherman-Morrison-Woodbury 形"""
    if step == 0.0:
        return X
    d = X.shape[1]
    U = np.hstack([G, X])
    V = np.hstack([X, -G])
    inner = np.eye(2 * d) + 0.5 * step * (V.T @ U)
    return X - step * (U @ linalg.solve(inner, V.T @ X))


def _retract(X: np.ndarray, G: np.ndarray, step: float) -> np.ndarray:
    k, d = X.shape
    if 2 * d < k:
        Y = _lowrank_retraction(X, G, step)
    else:
        Y = cayley_retraction(X, G @ X.T - X @ G.T, step)
    if orthonormality_defect(Y) > REORTHO_TOL:
        # 丸め誤差の蓄積を極分解で戻す
        Uy, _, Vty = np.linalg.svd(Y, full_matrices=False)
        Y = Uy @ Vty
    return Y


def _evaluate(fun: ObjectiveFn, A: np.ndarray) -> Tuple[float, np.ndarray]:
    value, grad = fun(A)
    value = float(value)
    grad = np.asarray(grad, dtype=float)
    if not np.isfinite(value) or not np.all(np.isfinite(grad)):
        raise GPPCANumericError("Stiefel objective returned a non-finite value")
    if grad.shape != A.shape:
        raise GPPCAArgumentError(f"gradient shape {grad.shape} does not match point shape {A.shape}")
    return value, grad


# ══════════════════════════════════════════════════════════════
# 曲線探索
# ══════════════════════════════════════════════════════════════

def optimize_on_stiefel(
    fun: ObjectiveFn,
    A0: np.ndarray,
    opts: Optional[StiefelOptions] = None,
) -> Tuple[np.ndarray, StiefelReport]:
    """fun を Stiefel 多様体上で最大化する"""
    opts = opts or StiefelOptions()
    X = np.asarray(A0, dtype=float)
    if X.ndim != 2 or X.shape[1] > X.shape[0]:
        raise GPPCAArgumentError(f"starting point must be k x d with d <= k, got {X.shape}")
    defect = orthonormality_defect(X)
    if defect > 1e-8:
        raise GPPCAArgumentError(f"starting point is not on the Stiefel manifold (defect {defect:.3e})")

    value, egrad = _evaluate(fun, X)
    evals = 1
    max_defect = orthonormality_defect(X)
    if X.shape[1] == 0:
        return X, StiefelReport(0, 0.0, True, value, evals, 0.0, "empty loading set")

    # 以降は F = -value の最小化として扱う
    F, G = -value, -egrad
    XtG = X.T @ G
    rgrad = G - X @ XtG.T
    gnorm = float(np.linalg.norm(rgrad))
    step = float(opts.initial_step)
    iterations = 0
    converged = gnorm <= opts.grad_tol
    message = "projected gradient below tolerance" if converged else ""

    while not converged and iterations < opts.max_iters:
        w_norm_sq = 2.0 * (float(np.sum(G * G)) - float(np.sum(XtG * XtG.T)))
        deriv = -0.5 * max(w_norm_sq, 0.0)

        accepted = False
        trial = min(max(step, MIN_STEP), MAX_STEP)
        for _ in range(opts.max_backtracks):
            try:
                X_new = _retract(X, G, trial)
            except linalg.LinAlgError:
                trial *= 0.5
                continue
            v_new, g_new = _evaluate(fun, X_new)
            evals += 1
            F_new = -v_new
            if F_new <= F + opts.armijo_c * trial * deriv:
                accepted = True
                break
            trial *= opts.armijo_rho

        if not accepted:
            message = "line search failed to find an improving step"
            break

        iterations += 1
        G_new = -g_new
        XtG_new = X_new.T @ G_new
        rgrad_new = G_new - X_new @ XtG_new.T

        if opts.bb_steps:
            S = X_new - X
            Yd = rgrad_new - rgrad
            sy = abs(float(np.sum(S * Yd)))
            if sy > 0.0:
                if iterations % 2 == 1:
                    step = float(np.sum(S * S)) / sy
                else:
                    step = sy / max(float(np.sum(Yd * Yd)), 1e-300)
            else:
                step = trial
        else:
            step = trial / opts.armijo_rho

        X, F, G, XtG, rgrad = X_new, F_new, G_new, XtG_new, rgrad_new
        max_defect = max(max_defect, orthonormality_defect(X))
        gnorm = float(np.linalg.norm(rgrad))
        logger.debug(f"[Stiefel] iter={iterations} objective={-F:.10g} grad={gnorm:.3e} step={trial:.3e}")
        if gnorm <= opts.grad_tol:
            converged = True
            message = "projected gradient below tolerance"

    if not converged and not message:
        message = "maximum iterations reached"
    report = StiefelReport(
        iterations=iterations,
        grad_norm=gnorm,
        converged=converged,
        objective=-F,
        evaluations=evals,
        max_defect=max_defect,
        message=message,
    )
    return X, report


def optimize_on_stiefel_multistart(
    fun: ObjectiveFn,
    starts: Sequence[np.ndarray],
    opts: Optional[StiefelOptions] = None,
    max_workers: Optional[int] = None,
) -> Tuple[np.ndarray, StiefelReport]:
    """複数の初期点から並行して最適化し、目的関数が最大のものを返す（同値なら先頭優先）"""
    if not starts:
        raise GPPCAArgumentError("multi-start needs at least one starting point")
    opts = opts or StiefelOptions()
    workers = max_workers or min(len(starts), 4)
    with ThreadPoolExecutor(max_workers=workers) as executor:
        futures = [executor.submit(optimize_on_stiefel, fun, A0, opts) for A0 in starts]
        results: List[Tuple[np.ndarray, StiefelReport]] = [f.result() for f in futures]

    best_index = 0
    for i, (_, rep) in enumerate(results):
        if rep.objective > results[best_index][1].objective:
            best_index = i
    best_A, best_report = results[best_index]
    best_report.start_index = best_index
    logger.debug(
        f"[Stiefel] multi-start: best start {best_index} of {len(starts)}, "
        f"objective={best_report.objective:.10g}"
    )
    return best_A, best_report
