# metrics.py
"""
評価指標: 最大主角、AvgMSE、RMSE / 95% 区間の被覆率と平均長。
"""

from __future__ import annotations

from typing import Iterable, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from modules.data.data_models import PredictiveNormal, ScoreReport
from modules.utils.errors import GPPCAArgumentError

IntervalTriple = Tuple[float, float, float]


def largest_principal_angle(A, B) -> float:
    """
    span(A) と span(B) の最大主角（ラジアン, [0, π/2]）。
    小さい角でも精度が落ちないよう scipy.linalg.subspace_angles（sin/cos の切り替え）を使う。
    """
    A = np.asarray(getattr(A, "values", A), dtype=float)
    B = np.asarray(getattr(B, "values", B), dtype=float)
    if A.ndim != 2 or A.shape != B.shape:
        raise GPPCAArgumentError(f"subspace bases must have equal k x d shapes, got {A.shape} and {B.shape}")
    angles = linalg.subspace_angles(A, B)
    return float(np.clip(np.max(angles), 0.0, np.pi / 2.0))


def avg_mse(estimates: Sequence[np.ndarray], truths: Sequence[np.ndarray]) -> float:
    """全実験・全要素の二乗誤差の平均"""
    if len(estimates) != len(truths) or not estimates:
        raise GPPCAArgumentError("estimates and truths must be non-empty lists of equal length")
    total = 0.0
    count = 0
    for est, tru in zip(estimates, truths):
        est = np.asarray(est, dtype=float)
        tru = np.asarray(tru, dtype=float)
        if est.shape != tru.shape:
            raise GPPCAArgumentError(f"shape mismatch: {est.shape} vs {tru.shape}")
        total += float(np.sum((est - tru) ** 2))
        count += tru.size
    return total / count


def _triples(pred: Iterable[Union[PredictiveNormal, IntervalTriple, Sequence]]):
    means, lowers, uppers = [], [], []
    for item in pred:
        if isinstance(item, PredictiveNormal):
            lo, hi = item.interval()
            means.append(item.mean)
            lowers.append(lo)
            uppers.append(hi)
        else:
            m, lo, hi = item
            means.append(np.atleast_1d(np.asarray(m, dtype=float)))
            lowers.append(np.atleast_1d(np.asarray(lo, dtype=float)))
            uppers.append(np.atleast_1d(np.asarray(hi, dtype=float)))
    if not means:
        raise GPPCAArgumentError("no predictions given")
    return np.concatenate(means), np.concatenate(lowers), np.concatenate(uppers)


def prediction_scores(pred, truth, A_true=None, A_hat=None) -> ScoreReport:
    """
    pred: PredictiveNormal または (mean, lower, upper) の列。
    truth: pred と同じ順の真値。i 行目が pred[i] に対応する（m×k、スカラー予測なら長さ m）。
    A_true と A_hat を両方渡したときだけ largest_angle を埋める（それ以外は NaN）。
    """
    pred = list(pred)
    mean, lower, upper = _triples(pred)
    truth = np.asarray(truth, dtype=float)
    if truth.ndim > 2 or (truth.ndim == 2 and truth.shape[0] != len(pred)):
        raise GPPCAArgumentError(f"truth must have one row per prediction: {truth.shape} for {len(pred)}")
    flat_truth = truth.reshape(-1)
    if mean.size != flat_truth.size:
        raise GPPCAArgumentError(f"{mean.size} predictions for {flat_truth.size} truth values")
    err = mean - flat_truth
    inside = (flat_truth >= lower) & (flat_truth <= upper)
    angle = float("nan")
    if A_true is not None and A_hat is not None:
        angle = largest_principal_angle(A_true, A_hat)
    return ScoreReport(
        rmse=float(np.sqrt(np.mean(err ** 2))),
        coverage_95=float(np.mean(inside)),
        avg_interval_length=float(np.mean(np.clip(upper - lower, 0.0, None))),
        avg_mse=float(np.mean(err ** 2)),
        largest_angle=angle,
    )
