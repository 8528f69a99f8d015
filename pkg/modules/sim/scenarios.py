# scenarios.py
"""
シミュレーション設定と合成データ生成。

replicate r の乱数列は (base_seed, r) から Philox で作るので、
一部の replicate だけを単独で再現でき、並列実行しても結果は変わらない。
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Any, Dict, Optional, Tuple

import numpy as np

from modules.core.kernels import build_correlation_matrix
from modules.core.linalg import orthonormalize, random_stiefel
from modules.data.data_models import InputGrid, KernelFamily, KernelSpec, LoadingMatrix
from modules.utils.errors import GPPCAArgumentError

logger = logging.getLogger(__name__)

DESK_REPLICATES = 20
FULL_REPLICATES = 100


class LoadingLaw(str, Enum):
    UNIFORM_STIEFEL = "uniform_stiefel"
    IID_UNIFORM_ENTRIES = "iid_uniform_entries"


class FactorLaw(str, Enum):
    GP = "gp"
    DETERMINISTIC_COSINE = "deterministic_cosine"


@dataclass(frozen=True)
class Scenario:
    """
    gamma_range を与えると因子ごとに γ ~ U[lo, hi]、なければ gamma を全因子で共有。
    sigma0_sq を省略した場合は tau から σ₀² = σ²/τ を導く。
    """
    name: str
    k: int
    d: int
    n: int
    kernel: KernelFamily = KernelFamily.MATERN_5_2
    gamma: float = 100.0
    gamma_range: Optional[Tuple[float, float]] = None
    sigma_sq: float = 1.0
    sigma0_sq: Optional[float] = None
    tau: Optional[float] = None
    loading_law: LoadingLaw = LoadingLaw.UNIFORM_STIEFEL
    factor_law: FactorLaw = FactorLaw.GP
    replicates: int = DESK_REPLICATES
    base_seed: int = 0
    fit_kernel: KernelFamily = KernelFamily.MATERN_5_2
    fit_shared_covariance: bool = True
    cosine_thetas: Optional[Tuple[float, ...]] = None
    n_test: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kernel", KernelFamily.parse(self.kernel))
        object.__setattr__(self, "fit_kernel", KernelFamily.parse(self.fit_kernel))
        object.__setattr__(self, "loading_law", LoadingLaw(self.loading_law))
        object.__setattr__(self, "factor_law", FactorLaw(self.factor_law))
        if self.d < 1 or self.d > self.k:
            raise GPPCAArgumentError(f"scenario '{self.name}': need 1 <= d <= k, got d={self.d}, k={self.k}")
        if self.n < 2:
            raise GPPCAArgumentError(f"scenario '{self.name}': need n >= 2, got {self.n}")
        if self.replicates < 1:
            raise GPPCAArgumentError(f"scenario '{self.name}': need at least one replicate")
        if self.sigma0_sq is None and self.tau is None:
            raise GPPCAArgumentError(f"scenario '{self.name}': give sigma0_sq or tau")
        if self.tau is not None and not self.tau > 0.0:
            raise GPPCAArgumentError(f"scenario '{self.name}': tau must be positive")
        if self.sigma0_sq is not None and self.sigma0_sq < 0.0:
            raise GPPCAArgumentError(f"scenario '{self.name}': sigma0_sq must be >= 0")
        if self.gamma_range is not None:
            lo, hi = (float(v) for v in self.gamma_range)
            if not 0.0 < lo <= hi:
                raise GPPCAArgumentError(f"scenario '{self.name}': invalid gamma_range {self.gamma_range}")
            object.__setattr__(self, "gamma_range", (lo, hi))
        if self.cosine_thetas is not None:
            thetas = tuple(float(t) for t in self.cosine_thetas)
            if len(thetas) != self.d:
                raise GPPCAArgumentError(f"scenario '{self.name}': need {self.d} cosine thetas")
            object.__setattr__(self, "cosine_thetas", thetas)

    @property
    def noise_variance(self) -> float:
        if self.sigma0_sq is not None:
            return float(self.sigma0_sq)
        return float(self.sigma_sq) / float(self.tau)

    @property
    def snr(self) -> float:
        if self.tau is not None:
            return float(self.tau)
        s0 = self.noise_variance
        return float("inf") if s0 == 0.0 else float(self.sigma_sq) / s0

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        for key in ("kernel", "fit_kernel", "loading_law", "factor_law"):
            d[key] = getattr(self, key).value
        return d

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Scenario":
        valid_keys = cls.__dataclass_fields__.keys()
        kwargs = {k: v for k, v in data.items() if k in valid_keys}
        for key in ("gamma_range", "cosine_thetas"):
            if kwargs.get(key) is not None:
                kwargs[key] = tuple(kwargs[key])
        try:
            return cls(**kwargs)
        except TypeError as e:
            raise GPPCAArgumentError(f"invalid scenario definition: {e}") from e


# 論文の数値実験に対応する設定（デスクスケール: N = 20）
SCENARIOS: Dict[str, Scenario] = {
    s.name: s
    for s in (
        Scenario("demo", k=2, d=1, n=100, gamma=100.0, sigma_sq=1.0, sigma0_sq=1.0),
        Scenario("shared_cov", k=8, d=4, n=200, gamma=100.0, sigma_sq=1.0, tau=100.0),
        Scenario("shared_cov_calibration", k=8, d=4, n=200, gamma=100.0, sigma_sq=1.0, tau=100.0, n_test=40),
        Scenario("shared_cov_low_snr", k=8, d=4, n=200, gamma=100.0, sigma_sq=1.0, tau=4.0),
        Scenario(
            "diff_cov", k=8, d=4, n=200, gamma_range=(10.0, 1000.0), sigma_sq=1.0, sigma0_sq=0.25,
            fit_shared_covariance=False,
        ),
        Scenario(
            "misspecified_exponential", k=20, d=4, n=100, kernel=KernelFamily.EXPONENTIAL, gamma=100.0,
            sigma_sq=1.0, tau=4.0, loading_law=LoadingLaw.IID_UNIFORM_ENTRIES,
        ),
        Scenario(
            "misspecified_gaussian", k=20, d=4, n=100, kernel=KernelFamily.GAUSSIAN, gamma=100.0,
            sigma_sq=1.0, tau=0.25, loading_law=LoadingLaw.IID_UNIFORM_ENTRIES,
        ),
        Scenario(
            "deterministic_cosine", k=20, d=4, n=100, sigma0_sq=0.25,
            loading_law=LoadingLaw.IID_UNIFORM_ENTRIES, factor_law=FactorLaw.DETERMINISTIC_COSINE,
        ),
    )
}


def load_scenario(name_or_path: str, replicates: Optional[int] = None, seed: Optional[int] = None,
                  full_scale: bool = False) -> Scenario:
    """登録済みの名前か JSON ファイルから Scenario を得る"""
    if os.path.isfile(name_or_path):
        try:
            with open(name_or_path, "r", encoding="utf-8") as f:
                scenario = Scenario.from_dict(json.load(f))
        except json.JSONDecodeError as e:
            raise GPPCAArgumentError(f"malformed scenario JSON {name_or_path}: line {e.lineno}: {e.msg}") from e
    elif name_or_path in SCENARIOS:
        scenario = SCENARIOS[name_or_path]
    else:
        raise GPPCAArgumentError(
            f"unknown scenario '{name_or_path}' (known: {', '.join(sorted(SCENARIOS))}, or a JSON file)"
        )
    changes: Dict[str, Any] = {}
    if full_scale:
        changes["replicates"] = FULL_REPLICATES
    if replicates is not None:
        changes["replicates"] = int(replicates)
    if seed is not None:
        changes["base_seed"] = int(seed)
    return replace(scenario, **changes) if changes else scenario


# ══════════════════════════════════════════════════════════════
# 乱数と生成
# ══════════════════════════════════════════════════════════════

def replicate_rng(base_seed: int, replicate_index: int) -> np.random.Generator:
    """(base_seed, r) から導いた Philox 乱数列"""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(base_seed), int(replicate_index)])))


def sample_uniform_stiefel(k: int, d: int, rng: np.random.Generator) -> LoadingMatrix:
    if d > k:
        raise GPPCAArgumentError(f"need d <= k, got k={k}, d={d}")
    return LoadingMatrix(random_stiefel(k, d, rng))


@dataclass
class SimulatedDataset:
    Y: np.ndarray
    A_true: np.ndarray
    Z_true: np.ndarray
    mean_true: np.ndarray
    grid: InputGrid
    A_raw: np.ndarray
    gammas: Tuple[float, ...] = ()
    test_inputs: Optional[np.ndarray] = None
    test_Y: Optional[np.ndarray] = None
    test_mean: Optional[np.ndarray] = None
    meta: Dict[str, Any] = field(default_factory=dict)

    def as_tuple(self):
        return self.Y, self.A_true, self.Z_true, self.mean_true


def simulate_dataset(scenario: Scenario, replicate_index: int) -> SimulatedDataset:
    """
    Y = A Z + ε。A_true は角度評価用に正規直交化した負荷、mean_true = A Z。
    n_test > 0 なら x_i = i (i = 1..n+n_test) から無作為に選んだ点を検証用に分ける。
    """
    rng = replicate_rng(scenario.base_seed, replicate_index)
    k, d = scenario.k, scenario.d
    n_total = scenario.n + scenario.n_test
    x = np.arange(1, n_total + 1, dtype=float)

    if scenario.loading_law is LoadingLaw.UNIFORM_STIEFEL:
        A_raw = sample_uniform_stiefel(k, d, rng).values
    else:
        A_raw = rng.uniform(0.0, 1.0, size=(k, d))
    A_true = orthonormalize(A_raw)

    gammas: Tuple[float, ...] = ()
    Z = np.empty((d, n_total))
    if scenario.factor_law is FactorLaw.GP:
        if scenario.gamma_range is not None:
            gammas = tuple(float(g) for g in rng.uniform(*scenario.gamma_range, size=d))
        else:
            gammas = (float(scenario.gamma),) * d
        for l in range(d):
            K = build_correlation_matrix(KernelSpec(scenario.kernel, (gammas[l],)), x)
            Z[l] = rng.multivariate_normal(
                np.zeros(n_total), scenario.sigma_sq * K, method="eigh", check_valid="ignore"
            )
    else:
        thetas = scenario.cosine_thetas
        if thetas is None:
            thetas = tuple(float(t) for t in rng.uniform(0.0, 1.0, size=d))
        for l in range(d):
            Z[l] = np.cos(0.05 * np.pi * thetas[l] * x)

    mean = A_raw @ Z
    noise_sd = np.sqrt(scenario.noise_variance)
    Y = mean + noise_sd * rng.standard_normal((k, n_total)) if noise_sd > 0.0 else mean.copy()

    test_idx = np.zeros(0, dtype=int)
    if scenario.n_test > 0:
        test_idx = np.sort(rng.choice(n_total, size=scenario.n_test, replace=False))
    train_idx = np.setdiff1d(np.arange(n_total), test_idx)

    data = SimulatedDataset(
        Y=Y[:, train_idx],
        A_true=A_true,
        Z_true=Z[:, train_idx],
        mean_true=mean[:, train_idx],
        grid=InputGrid(x[train_idx][:, None]),
        A_raw=A_raw,
        gammas=gammas,
        meta={"scenario": scenario.name, "replicate": int(replicate_index)},
    )
    if test_idx.size:
        data.test_inputs = x[test_idx][:, None]
        data.test_Y = Y[:, test_idx]
        data.test_mean = mean[:, test_idx]
    return data
