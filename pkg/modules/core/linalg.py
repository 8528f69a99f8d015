# linalg.py
"""
密行列の小道具: ジッター付き Cholesky、対数行列式、固有ベクトルの符号規約。
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg

from modules.utils.errors import GPPCAArgumentError, GPPCANumericError

logger = logging.getLogger(__name__)

JITTER_START = 1e-10
JITTER_MAX_DOUBLINGS = 10


@dataclass(frozen=True)
class CholeskyFactor:
    """C + jitter·I = L Lᵀ"""
    lower: np.ndarray
    jitter: float = 0.0

    @property
    def n(self) -> int:
        return int(self.lower.shape[0])

    def solve(self, b: np.ndarray) -> np.ndarray:
        """C⁻¹ b"""
        return linalg.cho_solve((self.lower, True), b, check_finite=False)

    def half_solve(self, b: np.ndarray) -> np.ndarray:
        """L⁻¹ b（C⁻¹ の二次形式を内積で書くため）"""
        return linalg.solve_triangular(self.lower, b, lower=True, check_finite=False)

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.lower))))

    def inverse(self) -> np.ndarray:
        return self.solve(np.eye(self.n))

    def reconstruct(self) -> np.ndarray:
        return self.lower @ self.lower.T


def jittered_cholesky(C: np.ndarray, label: str = "matrix", params: Optional[dict] = None) -> CholeskyFactor:
    """
    対称正定値行列の Cholesky 分解。
    失敗時はジッター 1e-10·trace/n から始めて最大 10 回倍増する。
    """
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise GPPCAArgumentError(f"{label} must be square, got shape {C.shape}")
    if not np.all(np.isfinite(C)):
        raise GPPCANumericError(f"{label} contains non-finite entries", params=params)
    n = C.shape[0]
    if n == 0:
        return CholeskyFactor(np.zeros((0, 0)))
    try:
        return CholeskyFactor(linalg.cholesky(C, lower=True, check_finite=False))
    except linalg.LinAlgError:
        pass

    scale = float(np.trace(C)) / n
    if not scale > 0.0:
        scale = 1.0
    jitter = JITTER_START * scale
    eye = np.eye(n)
    for _ in range(JITTER_MAX_DOUBLINGS + 1):
        try:
            L = linalg.cholesky(C + jitter * eye, lower=True, check_finite=False)
            logger.warning(f"[Linalg] {label}: Cholesky needed jitter {jitter:.3e}")
            return CholeskyFactor(L, jitter)
        except linalg.LinAlgError:
            jitter *= 2.0
    raise GPPCANumericError(
        f"Cholesky factorization of {label} failed",
        params=params,
        advice="the matrix is numerically singular; check for duplicated inputs or extreme range/SNR values",
    )


def sign_normalize(A: np.ndarray) -> np.ndarray:
    """各列の絶対値最大の要素が正になるよう符号を揃える"""
    A = np.array(A, dtype=float, copy=True)
    if A.size == 0:
        return A
    idx = np.argmax(np.abs(A), axis=0)
    signs = np.sign(A[idx, np.arange(A.shape[1])])
    signs[signs == 0.0] = 1.0
    return A * signs


def top_eigenvectors(S: np.ndarray, d: int) -> tuple[np.ndarray, np.ndarray]:
    """
    対称行列 S の上位 d 固有対（固有値の降順）。
    戻り値の固有ベクトルは sign_normalize 済み。
    """
    S = np.asarray(S, dtype=float)
    k = S.shape[0]
    if d > k:
        raise GPPCAArgumentError(f"requested {d} eigenvectors from a {k}x{k} matrix")
    if d == 0:
        return np.zeros(0), np.zeros((k, 0))
    S = 0.5 * (S + S.T)
    try:
        w, V = linalg.eigh(S, subset_by_index=[k - d, k - 1], check_finite=False)
    except (linalg.LinAlgError, ValueError) as e:
        raise GPPCANumericError(f"symmetric eigendecomposition failed: {e}") from e
    order = np.argsort(w)[::-1]
    return w[order], sign_normalize(V[:, order])


def orthonormalize(A: np.ndarray) -> np.ndarray:
    """QR で列を正規直交化する（R の対角を正にして元の向きを保つ）"""
    Q, R = np.linalg.qr(A)
    signs = np.sign(np.diag(R))
    signs[signs == 0.0] = 1.0
    return Q * signs


def symmetrize(S: np.ndarray) -> np.ndarray:
    return 0.5 * (S + S.T)


def random_stiefel(k: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Gaussian 行列の QR（R の対角を正に補正）による一様分布の Stiefel 点"""
    if d > k:
        raise GPPCAArgumentError(f"need d <= k, got k={k}, d={d}")
    return orthonormalize(rng.standard_normal((k, d)))
