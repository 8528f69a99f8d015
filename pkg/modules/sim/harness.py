# harness.py
"""
シナリオごとの反復実験とレポート出力。

各 replicate で手法を適用し、真の負荷との最大主角と AZ 推定の MSE を記録する。
GPPCA は事後平均 ÂẐ、ベースラインは ÂÂᵀY を平均推定として使う。
"""

from __future__ import annotations

import csv
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from modules.baselines.estimators import ly_loadings, pca_loadings, projected_mean
from modules.baselines.metrics import avg_mse, largest_principal_angle, prediction_scores
from modules.core.gppca_core import fit
from modules.core.prediction import field_posterior, predict_batch
from modules.data.data_models import OutputMatrix
from modules.sim.scenarios import Scenario, SimulatedDataset, simulate_dataset
from modules.utils.config_handler import FitConfig
from modules.utils.errors import GPPCAArgumentError, GPPCAError

logger = logging.getLogger(__name__)

METHODS = ("pca", "gppca", "ly1", "ly5")
FLOAT_FORMAT = "{:.17g}"

REPORT_COLUMNS = [
    "scenario", "method", "replicate", "status", "largest_angle", "mse",
    "rmse", "coverage_95", "avg_interval_length", "error",
]
SUMMARY_COLUMNS = [
    "scenario", "method", "replicates", "failures", "median_angle", "mean_angle",
    "avg_mse", "median_mse", "pooled_coverage_95",
]


@dataclass
class MethodResult:
    scenario: str
    method: str
    replicate: int
    status: str = "ok"
    largest_angle: float = float("nan")
    mse: float = float("nan")
    rmse: float = float("nan")
    coverage_95: float = float("nan")
    avg_interval_length: float = float("nan")
    error: str = ""
    seconds: float = 0.0
    estimate: Optional[np.ndarray] = field(default=None, repr=False)
    truth: Optional[np.ndarray] = field(default=None, repr=False)
    n_covered: int = 0
    n_predicted: int = 0

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass
class ExperimentReport:
    scenario: Scenario
    methods: List[str]
    results: List[MethodResult] = field(default_factory=list)

    def rows(self, method: str) -> List[MethodResult]:
        return [r for r in self.results if r.method == method]

    def angles(self, method: str) -> np.ndarray:
        return np.array([r.largest_angle for r in self.rows(method) if r.ok])

    def mses(self, method: str) -> np.ndarray:
        return np.array([r.mse for r in self.rows(method) if r.ok])

    def failures(self, method: str) -> int:
        return sum(1 for r in self.rows(method) if not r.ok)

    def avg_mse(self, method: str) -> float:
        ok = [r for r in self.rows(method) if r.ok and r.estimate is not None]
        if not ok:
            return float("nan")
        return avg_mse([r.estimate for r in ok], [r.truth for r in ok])

    def pooled_coverage(self, method: str) -> float:
        covered = sum(r.n_covered for r in self.rows(method) if r.ok)
        total = sum(r.n_predicted for r in self.rows(method) if r.ok)
        return covered / total if total else float("nan")

    def summary(self) -> List[Dict[str, Any]]:
        out = []
        for m in self.methods:
            angles, mses = self.angles(m), self.mses(m)
            out.append({
                "scenario": self.scenario.name,
                "method": m,
                "replicates": len(self.rows(m)),
                "failures": self.failures(m),
                "median_angle": float(np.median(angles)) if angles.size else float("nan"),
                "mean_angle": float(np.mean(angles)) if angles.size else float("nan"),
                "avg_mse": self.avg_mse(m),
                "median_mse": float(np.median(mses)) if mses.size else float("nan"),
                "pooled_coverage_95": self.pooled_coverage(m),
            })
        return out

    def header_lines(self) -> List[str]:
        s = self.scenario
        return [
            f"scenario={s.name} k={s.k} d={s.d} n={s.n} replicates={s.replicates} base_seed={s.base_seed}",
            f"sigma_sq={s.sigma_sq!r} sigma0_sq={s.noise_variance!r} tau={s.snr!r} kernel={s.kernel.value}",
        ]

    # --- 書き出し ---

    def write_csv(self, path: str) -> None:
        """replicate ごとの結果。所要時間は含めない（同じ seed なら同一ファイルになる）"""
        _write_rows(path, REPORT_COLUMNS, [_result_row(r) for r in self.results], self.header_lines())

    def write_timing_csv(self, path: str) -> None:
        rows = [
            {"scenario": r.scenario, "method": r.method, "replicate": r.replicate,
             "k": self.scenario.k, "n": self.scenario.n, "d": self.scenario.d, "seconds": f"{r.seconds:.6f}"}
            for r in self.results
        ]
        _write_rows(path, ["scenario", "method", "replicate", "k", "n", "d", "seconds"], rows, ())

    def write_summary_csv(self, path: str) -> None:
        rows = [{k: _fmt(v) for k, v in row.items()} for row in self.summary()]
        _write_rows(path, SUMMARY_COLUMNS, rows, self.header_lines())


def _fmt(value: Any) -> Any:
    if isinstance(value, float):
        return FLOAT_FORMAT.format(value)
    return value


def _result_row(r: MethodResult) -> Dict[str, Any]:
    return {col: _fmt(getattr(r, col)) for col in REPORT_COLUMNS}


def _write_rows(path: str, columns: Sequence[str], rows: Sequence[Dict[str, Any]], comments: Sequence[str]) -> None:
    folder = os.path.dirname(path)
    if folder:
        os.makedirs(folder, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        for c in comments:
            f.write(f"# {c}\n")
        writer = csv.DictWriter(f, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


# ══════════════════════════════════════════════════════════════
# 実行
# ══════════════════════════════════════════════════════════════

def parse_methods(spec: str) -> List[str]:
    methods = [m.strip().lower() for m in spec.split(",") if m.strip()]
    unknown = [m for m in methods if m not in METHODS]
    if unknown or not methods:
        raise GPPCAArgumentError(f"unknown method(s): {', '.join(unknown) or '(none)'}; choose from {', '.join(METHODS)}")
    return methods


def gppca_config_for(scenario: Scenario, replicate_index: int, base: Optional[FitConfig] = None) -> FitConfig:
    base_dict = base.to_dict() if base is not None else {}
    base_dict.update(
        n_factors=scenario.d,
        kernel=scenario.fit_kernel,
        shared_covariance=scenario.fit_shared_covariance,
        seed=scenario.base_seed * 100003 + replicate_index,
    )
    return FitConfig.from_dict(base_dict)


def _run_method(method: str, scenario: Scenario, data: SimulatedDataset, r: int,
                base_config: Optional[FitConfig]) -> MethodResult:
    result = MethodResult(scenario.name, method, r)
    started = time.perf_counter()
    try:
        if method == "gppca":
            model = fit(OutputMatrix(data.Y, data.grid), gppca_config_for(scenario, r, base_config))
            A_hat = model.loadings.values
            estimate = field_posterior(model).mean
            if data.test_inputs is not None and data.test_Y is not None:
                preds = predict_batch(model, data.test_inputs)
                scores = prediction_scores(preds, data.test_Y.T)
                result.rmse = scores.rmse
                result.coverage_95 = scores.coverage_95
                result.avg_interval_length = scores.avg_interval_length
                result.n_predicted = data.test_Y.size
                result.n_covered = int(round(scores.coverage_95 * data.test_Y.size))
        else:
            if method == "pca":
                est = pca_loadings(data.Y, scenario.d)
            else:
                est = ly_loadings(data.Y, scenario.d, 1 if method == "ly1" else 5)
            A_hat = est.loadings
            estimate = projected_mean(est, data.Y)
        result.largest_angle = largest_principal_angle(data.A_true, A_hat)
        result.mse = avg_mse([estimate], [data.mean_true])
        result.estimate = estimate
        result.truth = data.mean_true
    except (GPPCAError, np.linalg.LinAlgError) as e:
        result.status = "failed"
        result.error = str(e).replace("\n", " ")
        logger.error(f"[Harness] {scenario.name} replicate {r} {method} failed: {e}")
    result.seconds = time.perf_counter() - started
    return result


def run_replicate(scenario: Scenario, replicate_index: int, methods: Sequence[str],
                  base_config: Optional[FitConfig] = None) -> List[MethodResult]:
    data = simulate_dataset(scenario, replicate_index)
    results = [_run_method(m, scenario, data, replicate_index, base_config) for m in methods]
    summary = ", ".join(f"{r.method}={r.largest_angle:.4f}" for r in results if r.ok)
    logger.info(f"[Harness] {scenario.name} replicate {replicate_index}: angles {summary}")
    return results


def run_experiment(scenario: Scenario, methods: Sequence[str] = METHODS, workers: Optional[int] = None,
                   base_config: Optional[FitConfig] = None) -> ExperimentReport:
    """replicate を並列に実行し、replicate 番号順に集計する"""
    methods = list(methods)
    unknown = [m for m in methods if m not in METHODS]
    if unknown or not methods:
        raise GPPCAArgumentError(f"unknown method(s): {unknown}; choose from {METHODS}")
    logger.info(
        f"[Harness] scenario={scenario.name} replicates={scenario.replicates} methods={','.join(methods)} "
        f"sigma0^2={scenario.noise_variance:g}"
    )
    workers = max(1, int(workers or 1))
    indices = range(scenario.replicates)
    if workers == 1:
        per_rep = [run_replicate(scenario, r, methods, base_config) for r in indices]
    else:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            futures = [executor.submit(run_replicate, scenario, r, methods, base_config) for r in indices]
            per_rep = [f.result() for f in futures]
    report = ExperimentReport(scenario, methods)
    for rows in per_rep:
        report.results.extend(rows)
    failed = sum(report.failures(m) for m in methods)
    if failed:
        logger.warning(f"[Harness] {failed} method run(s) failed in scenario {scenario.name}")
    return report
