# kernels.py
"""
定常相関カーネルと相関行列 K_l の構築。

  matern_5_2 : (1 + √5 d/γ + 5 d²/(3γ²)) exp(-√5 d/γ)
  exponential: exp(-d/γ)
  gaussian   : exp(-d²/γ²)

多次元入力では座標ごとの 1 次元カーネルの積をとる。
"""

from __future__ import annotations

from typing import Callable, Dict, Union

import numpy as np

from modules.data.data_models import InputGrid, KernelFamily, KernelSpec
from modules.utils.errors import GPPCAArgumentError

_SQRT5 = np.sqrt(5.0)

GridLike = Union[InputGrid, np.ndarray]


def _matern_5_2(r: np.ndarray) -> np.ndarray:
    s = _SQRT5 * r
    return (1.0 + s + s * s / 3.0) * np.exp(-s)


def _exponential(r: np.ndarray) -> np.ndarray:
    return np.exp(-r)


def _gaussian(r: np.ndarray) -> np.ndarray:
    return np.exp(-r * r)


# r = |x - x'| / γ を受け取る 1 次元相関
_PROFILES: Dict[KernelFamily, Callable[[np.ndarray], np.ndarray]] = {
    KernelFamily.MATERN_5_2: _matern_5_2,
    KernelFamily.EXPONENTIAL: _exponential,
    KernelFamily.GAUSSIAN: _gaussian,
}


def kernel_from_name(name: str, ranges) -> KernelSpec:
    """設定ファイルの文字列表現から KernelSpec を作る"""
    return KernelSpec(KernelFamily.parse(name), tuple(np.atleast_1d(ranges)))


def _points(grid: GridLike) -> np.ndarray:
    if isinstance(grid, InputGrid):
        return grid.points
    pts = np.asarray(grid, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2:
        raise GPPCAArgumentError(f"input points must be a 2-D array, got shape {pts.shape}")
    return pts


def _check_dim(spec: KernelSpec, p: int) -> None:
    if p != spec.dim:
        raise GPPCAArgumentError(f"input dimension {p} does not match kernel with {spec.dim} range(s)")


def kernel_eval(spec: KernelSpec, xa, xb) -> float:
    """2 点間の相関 ∏_m K_m(x_am, x_bm)"""
    a = np.atleast_1d(np.asarray(xa, dtype=float))
    b = np.atleast_1d(np.asarray(xb, dtype=float))
    if a.shape != b.shape:
        raise GPPCAArgumentError(f"input vectors differ in dimension: {a.shape} vs {b.shape}")
    _check_dim(spec, a.size)
    profile = _PROFILES[spec.family]
    value = 1.0
    for m, gamma in enumerate(spec.ranges):
        value *= float(profile(np.asarray(abs(a[m] - b[m]) / gamma)))
    return value


def cross_correlation_matrix(spec: KernelSpec, xa: GridLike, xb: GridLike) -> np.ndarray:
    """xa の各点と xb の各点の相関行列 (na × nb)"""
    pa, pb = _points(xa), _points(xb)
    _check_dim(spec, pa.shape[1])
    _check_dim(spec, pb.shape[1])
    profile = _PROFILES[spec.family]
    out = np.ones((pa.shape[0], pb.shape[0]))
    for m, gamma in enumerate(spec.ranges):
        dist = np.abs(pa[:, m][:, None] - pb[:, m][None, :])
        out *= profile(dist / gamma)
    return out


def build_correlation_matrix(spec: KernelSpec, grid: GridLike) -> np.ndarray:
    """n×n 相関行列 K。対称性は厳密（|a-b| = |b-a|）"""
    K = cross_correlation_matrix(spec, grid, grid)
    np.fill_diagonal(K, 1.0)
    return K


def cross_correlation(spec: KernelSpec, grid: GridLike, xstar) -> np.ndarray:
    """学習点と新しい入力 x* の相関ベクトル k*(x*)（長さ n）"""
    x = np.atleast_1d(np.asarray(xstar, dtype=float))[None, :]
    return cross_correlation_matrix(spec, grid, x)[:, 0]
