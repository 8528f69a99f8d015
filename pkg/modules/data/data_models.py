# data_models.py
"""
GPPCA のドメイン型。

数値配列は numpy.ndarray で保持し、保存用には to_dict()/from_dict() で
JSON 互換のリストへ変換する（from_dict は未知のキーを無視する）。
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from modules.utils.errors import GPPCAArgumentError

ORTHO_TOL = 1e-10
Z_95 = 1.96


def _valid_kwargs(cls, data: Dict[str, Any]) -> Dict[str, Any]:
    """dataclass のフィールドに存在するキーだけを残す（後方互換性のため）"""
    valid_keys = cls.__dataclass_fields__.keys()
    return {k: v for k, v in data.items() if k in valid_keys}


def _as_matrix(values: Any, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 2:
        raise GPPCAArgumentError(f"{name} must be a 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise GPPCAArgumentError(f"{name} contains non-finite entries")
    return arr


# ══════════════════════════════════════════════════════════════
# カーネル
# ══════════════════════════════════════════════════════════════

class KernelFamily(str, Enum):
    MATERN_5_2 = "matern_5_2"
    EXPONENTIAL = "exponential"
    GAUSSIAN = "gaussian"

    @classmethod
    def parse(cls, name: Any) -> "KernelFamily":
        if isinstance(name, KernelFamily):
            return name
        try:
            return cls(str(name).strip().lower())
        except ValueError:
            choices = ", ".join(f.value for f in cls)
            raise GPPCAArgumentError(f"unknown kernel family '{name}' (expected one of: {choices})") from None


@dataclass(frozen=True)
class KernelSpec:
    """カーネル族と入力次元ごとのレンジ γ"""
    family: KernelFamily
    ranges: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "family", KernelFamily.parse(self.family))
        ranges = tuple(float(g) for g in np.atleast_1d(np.asarray(self.ranges, dtype=float)))
        if not ranges:
            raise GPPCAArgumentError("kernel ranges must not be empty")
        for g in ranges:
            if not np.isfinite(g) or g <= 0.0:
                raise GPPCAArgumentError(f"kernel range must be positive and finite, got {g}")
        object.__setattr__(self, "ranges", ranges)

    @property
    def dim(self) -> int:
        return len(self.ranges)

    def to_dict(self) -> Dict[str, Any]:
        return {"family": self.family.value, "ranges": list(self.ranges)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "KernelSpec":
        return cls(KernelFamily.parse(data["family"]), tuple(data["ranges"]))


# ══════════════════════════════════════════════════════════════
# 入力・出力
# ══════════════════════════════════════════════════════════════

@dataclass
class InputGrid:
    """
    n 個の p 次元入力点。
    covariates は平均構造専用の追加列（カーネルには使わない）。
    """
    points: np.ndarray
    covariates: Optional[np.ndarray] = None
    covariate_names: Tuple[str, ...] = ()

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        self.points = _as_matrix(pts, "input grid")
        if self.points.shape[0] < 2:
            raise GPPCAArgumentError(f"input grid needs at least 2 points, got {self.points.shape[0]}")
        if self.covariates is not None:
            cov = np.asarray(self.covariates, dtype=float)
            if cov.ndim == 1:
                cov = cov[:, None]
            self.covariates = _as_matrix(cov, "covariates")
            if self.covariates.shape[0] != self.points.shape[0]:
                raise GPPCAArgumentError("covariate rows must match the number of input points")
        self.covariate_names = tuple(self.covariate_names)

    @property
    def n(self) -> int:
        return int(self.points.shape[0])

    @property
    def p(self) -> int:
        return int(self.points.shape[1])

    def diameter(self) -> np.ndarray:
        """次元ごとの (max - min)。幅 0 の次元は 1 とする"""
        span = self.points.max(axis=0) - self.points.min(axis=0)
        return np.where(span > 0.0, span, 1.0)

    @classmethod
    def regular(cls, n: int) -> "InputGrid":
        """x_i = i (i = 1..n) の等間隔 1 次元グリッド"""
        return cls(np.arange(1, n + 1, dtype=float)[:, None])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "points": self.points.tolist(),
            "covariates": None if self.covariates is None else self.covariates.tolist(),
            "covariate_names": list(self.covariate_names),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "InputGrid":
        kwargs = _valid_kwargs(cls, data)
        kwargs["covariate_names"] = tuple(kwargs.get("covariate_names", ()))
        return cls(**kwargs)


@dataclass
class OutputMatrix:
    """k×n の観測行列 Y と入力グリッド"""
    values: np.ndarray
    grid: InputGrid

    def __post_init__(self):
        self.values = _as_matrix(self.values, "output matrix")
        if self.values.shape[0] < 1:
            raise GPPCAArgumentError("output matrix needs at least one row")
        if self.values.shape[1] != self.grid.n:
            raise GPPCAArgumentError(
                f"output matrix has {self.values.shape[1]} columns but the grid has {self.grid.n} points"
            )

    @property
    def k(self) -> int:
        return int(self.values.shape[0])

    @property
    def n(self) -> int:
        return int(self.values.shape[1])


@dataclass
class LoadingMatrix:
    """直交列を持つ k×d の因子負荷行列 A（Stiefel 多様体上の点）"""
    values: np.ndarray

    def __post_init__(self):
        self.values = _as_matrix(self.values, "loading matrix")
        k, d = self.values.shape
        if d > k:
            raise GPPCAArgumentError(f"loading matrix needs d <= k, got k={k}, d={d}")
        defect = orthonormality_defect(self.values)
        if defect > ORTHO_TOL:
            raise GPPCAArgumentError(f"loading columns are not orthonormal (max |AᵀA - I| = {defect:.3e})")

    @property
    def k(self) -> int:
        return int(self.values.shape[0])

    @property
    def d(self) -> int:
        return int(self.values.shape[1])


def orthonormality_defect(A: np.ndarray) -> float:
    A = np.asarray(A, dtype=float)
    if A.shape[1] == 0:
        return 0.0
    return float(np.max(np.abs(A.T @ A - np.eye(A.shape[1]))))


@dataclass
class FactorMatrix:
    """d×n の潜在因子行列 Z"""
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise GPPCAArgumentError("factor matrix must be 2-D")


# ══════════════════════════════════════════════════════════════
# ハイパーパラメータ
# ══════════════════════════════════════════════════════════════

@dataclass
class HyperParams:
    """
    σ₀² と因子ごとの SNR τ_l = σ_l²/σ₀²、カーネル設定。
    shared_covariance のときは全因子で τ とカーネルが一致する。
    """
    sigma0_sq: float
    taus: Tuple[float, ...]
    kernel_specs: Tuple[KernelSpec, ...]
    shared_covariance: bool = True
    fixed_noise: Optional[float] = None

    def __post_init__(self):
        self.sigma0_sq = float(self.sigma0_sq)
        self.taus = tuple(float(t) for t in self.taus)
        self.kernel_specs = tuple(self.kernel_specs)
        if not np.isfinite(self.sigma0_sq) or self.sigma0_sq < 0.0:
            raise GPPCAArgumentError(f"sigma0_sq must be >= 0, got {self.sigma0_sq}")
        if len(self.taus) != len(self.kernel_specs):
            raise GPPCAArgumentError("taus and kernel_specs must have one entry per factor")
        for t in self.taus:
            if not np.isfinite(t) or t <= 0.0:
                raise GPPCAArgumentError(f"tau must be positive and finite, got {t}")
        if self.shared_covariance and self.taus:
            if len(set(self.taus)) > 1 or len(set(self.kernel_specs)) > 1:
                raise GPPCAArgumentError("shared covariance requires identical taus and kernels across factors")
        if self.fixed_noise is not None:
            self.fixed_noise = float(self.fixed_noise)
            if self.fixed_noise <= 0.0:
                raise GPPCAArgumentError(f"fixed_noise must be positive, got {self.fixed_noise}")

    @property
    def d(self) -> int:
        return len(self.taus)

    @property
    def sigmas_sq(self) -> Tuple[float, ...]:
        """σ_l² = τ_l σ₀²"""
        return tuple(t * self.sigma0_sq for t in self.taus)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "sigma0_sq": self.sigma0_sq,
            "taus": list(self.taus),
            "kernel_specs": [s.to_dict() for s in self.kernel_specs],
            "shared_covariance": self.shared_covariance,
            "fixed_noise": self.fixed_noise,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "HyperParams":
        kwargs = _valid_kwargs(cls, data)
        kwargs["kernel_specs"] = tuple(KernelSpec.from_dict(s) for s in kwargs.get("kernel_specs", []))
        kwargs["taus"] = tuple(kwargs.get("taus", []))
        return cls(**kwargs)


# ══════════════════════════════════════════════════════════════
# 予測・評価
# ══════════════════════════════════════════════════════════════

@dataclass
class PredictiveNormal:
    """x* における Y(x*) の予測分布 N(mean, covariance)"""
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.asarray(self.covariance, dtype=float)
        if cov.shape != (self.mean.size, self.mean.size):
            raise GPPCAArgumentError(f"covariance shape {cov.shape} does not match mean length {self.mean.size}")
        self.covariance = 0.5 * (cov + cov.T)

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    def interval(self, multiplier: float = Z_95) -> Tuple[np.ndarray, np.ndarray]:
        half = multiplier * self.sd
        return self.mean - half, self.mean + half

    def to_dict(self) -> Dict[str, Any]:
        return {"mean": self.mean.tolist(), "covariance": self.covariance.tolist()}


@dataclass
class FieldPosterior:
    """
    ノイズなし場 AZ の事後分布。
    variances は (AZ)_{j,i} ごとの周辺分散、trend は平均構造 (HB̂)ᵀ（なければ None）。
    """
    mean: np.ndarray
    variances: np.ndarray
    factor_means: np.ndarray
    factor_covariances: List[np.ndarray] = field(default_factory=list)
    loadings: Optional[np.ndarray] = None
    trend: Optional[np.ndarray] = None

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(np.clip(self.variances, 0.0, None))

    def interval(self, multiplier: float = Z_95) -> Tuple[np.ndarray, np.ndarray]:
        half = multiplier * self.sd
        return self.mean - half, self.mean + half


class SubspaceMethod(str, Enum):
    PCA = "pca"
    PPCA = "ppca"
    GPPCA = "gppca"
    LY = "ly"


@dataclass
class SubspaceEstimate:
    loadings: np.ndarray
    method: SubspaceMethod
    noise_variance: Optional[float] = None

    def __post_init__(self):
        self.method = SubspaceMethod(self.method)
        defect = orthonormality_defect(self.loadings)
        if defect > ORTHO_TOL:
            raise GPPCAArgumentError(f"{self.method.value} loadings are not orthonormal ({defect:.3e})")


@dataclass
class ScoreReport:
    rmse: float = 0.0
    coverage_95: float = 0.0
    avg_interval_length: float = 0.0
    avg_mse: float = 0.0
    largest_angle: float = float("nan")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ScoreReport":
        return cls(**_valid_kwargs(cls, data))
