#config_handler.py

import copy
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Optional, Tuple

from modules.core.stiefel_opt import StiefelOptions
from modules.data.data_models import KernelFamily
from modules.utils.errors import GPPCAArgumentError

logger = logging.getLogger(__name__)

STIEFEL_POLICIES = ("warm_start", "multi_start")


@dataclass(frozen=True)
class FitConfig:
    """fit() に渡す検証済みの設定"""
    n_factors: int = 1
    kernel: KernelFamily = KernelFamily.MATERN_5_2
    shared_covariance: bool = True
    fixed_noise: Optional[float] = None
    max_iter: int = 100
    ftol: float = 1e-8
    fd_step: float = 1e-5
    initial_tau: float = 1.0
    initial_gamma: Optional[Tuple[float, ...]] = None
    stiefel: StiefelOptions = field(default_factory=StiefelOptions)
    stiefel_policy: str = "warm_start"
    seed: int = 0
    mean_basis: Optional[Dict[str, Any]] = None

    def __post_init__(self):
        object.__setattr__(self, "kernel", KernelFamily.parse(self.kernel))
        if int(self.n_factors) < 1:
            raise GPPCAArgumentError(f"n_factors must be >= 1, got {self.n_factors}")
        if self.fixed_noise is not None and not float(self.fixed_noise) > 0.0:
            raise GPPCAArgumentError(f"fixed_noise must be positive, got {self.fixed_noise}")
        if int(self.max_iter) < 1:
            raise GPPCAArgumentError(f"max_iter must be >= 1, got {self.max_iter}")
        if not float(self.ftol) > 0.0 or not float(self.fd_step) > 0.0:
            raise GPPCAArgumentError("ftol and fd_step must be positive")
        if not float(self.initial_tau) > 0.0:
            raise GPPCAArgumentError(f"initial_tau must be positive, got {self.initial_tau}")
        if self.initial_gamma is not None:
            gammas = tuple(float(g) for g in self.initial_gamma)
            if any(not g > 0.0 for g in gammas):
                raise GPPCAArgumentError(f"initial_gamma entries must be positive, got {gammas}")
            object.__setattr__(self, "initial_gamma", gammas)
        if self.stiefel_policy not in STIEFEL_POLICIES:
            raise GPPCAArgumentError(
                f"stiefel_policy must be one of {STIEFEL_POLICIES}, got '{self.stiefel_policy}'"
            )
        if isinstance(self.stiefel, dict):
            object.__setattr__(self, "stiefel", StiefelOptions.from_dict(self.stiefel))

    @property
    def has_mean(self) -> bool:
        basis = self.mean_basis or {}
        return bool(basis.get("intercept") or basis.get("linear_input") or basis.get("covariate_columns"))

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["kernel"] = self.kernel.value
        d["initial_gamma"] = None if self.initial_gamma is None else list(self.initial_gamma)
        return d

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FitConfig":
        valid_keys = cls.__dataclass_fields__.keys()
        kwargs = {k: v for k, v in data.items() if k in valid_keys}
        if isinstance(kwargs.get("stiefel"), dict):
            kwargs["stiefel"] = StiefelOptions.from_dict(kwargs["stiefel"])
        return cls(**kwargs)


class ConfigHandler:
    def __init__(self, config_path=None):
        self.config_path = config_path
        self.default_config = FitConfig().to_dict()

    def load_config(self) -> Dict[str, Any]:
        """設定を読み込む。パス未指定ならデフォルトを返す"""
        config = copy.deepcopy(self.default_config)
        if not self.config_path:
            return config
        if not os.path.exists(self.config_path):
            raise GPPCAArgumentError(f"config file not found: {self.config_path}")

        try:
            with open(self.config_path, "r", encoding="utf-8") as f:
                loaded = json.load(f)
        except json.JSONDecodeError as e:
            raise GPPCAArgumentError(f"malformed config JSON in {self.config_path}: line {e.lineno}: {e.msg}") from e
        if not isinstance(loaded, dict):
            raise GPPCAArgumentError(f"config root must be a JSON object: {self.config_path}")

        for key, value in loaded.items():
            if key not in config:
                logger.warning(f"[Config] unknown key '{key}' ignored")
                continue
            if key == "stiefel" and isinstance(value, dict):
                config[key].update(value)
            else:
                config[key] = value
        logger.info(f"[Config] loaded {self.config_path}")
        return config

    def to_fit_config(self, overrides: Optional[Dict[str, Any]] = None) -> FitConfig:
        config = self.load_config()
        config.update(overrides or {})
        try:
            return FitConfig.from_dict(config)
        except TypeError as e:
            raise GPPCAArgumentError(f"invalid config: {e}") from e

    def save_config(self, config_dict):
        """現在の設定を保存する"""
        if isinstance(config_dict, FitConfig):
            config_dict = config_dict.to_dict()
        folder = os.path.dirname(self.config_path)
        if folder:
            os.makedirs(folder, exist_ok=True)
        with open(self.config_path, "w", encoding="utf-8") as f:
            json.dump(config_dict, f, indent=4, ensure_ascii=False)
