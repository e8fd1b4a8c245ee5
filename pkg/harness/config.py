"""Run configuration: one TOML file, a ``profile`` preset, then per-section overrides.

    profile = "desk"

    [network]
    dict_sizes = [64, 64, 32]

    [run]
    epochs = 50
"""
import copy
import json
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from codebook_bootstrap.config import BootstrapConfig
from losses.weights import LossWeights
from regnet.config import NetworkConfig
from utils.determinism import deterministic_requested
from utils.errors import ConfigError


class OptimizerConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str = "adam"
    lr: float = Field(1e-3, gt=0)
    betas: Tuple[float, float] = (0.9, 0.999)

    @model_validator(mode="after")
    def _check(self):
        if self.name != "adam":
            raise ValueError(f"unsupported optimizer '{self.name}', only adam is available")
        return self


class DataConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    # 为空时按下面的参数合成数据
    dataset_dir: Optional[str] = None
    n_pairs: int = Field(50, ge=1)
    dims: Tuple[int, int, int] = (32, 32, 24)
    spacing: Tuple[float, float, float] = (0.7, 0.7, 0.7)
    deform_amplitude: float = Field(2.0, ge=0)
    noise_sigma: float = Field(0.02, ge=0)
    seed: int = 0
    # train / val / test，按 subject 划分
    split: Tuple[float, float, float] = (0.7, 0.1, 0.2)
    crop: Optional[Tuple[int, int, int]] = None

    @model_validator(mode="after")
    def _check(self):
        if any(f < 0 for f in self.split) or abs(sum(self.split) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must be non-negative and sum to 1, got {self.split}")
        return self

    @property
    def model_dims(self) -> Tuple[int, int, int]:
        return self.crop if self.crop is not None else self.dims


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(200, ge=1)
    batch_size: int = Field(4, ge=1)
    seeds: List[int] = [0, 1, 2]
    eval_every: int = Field(1, ge=1)
    deterministic: bool = False
    output_dir: str = "./runs"
    max_workers: int = Field(4, ge=1)


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    profile: str = "desk"
    network: NetworkConfig = NetworkConfig()
    loss: LossWeights = LossWeights()
    optimizer: OptimizerConfig = OptimizerConfig()
    data: DataConfig = DataConfig()
    bootstrap: BootstrapConfig = BootstrapConfig()
    run: RunConfig = RunConfig()

    @model_validator(mode="after")
    def _check(self):
        dims = tuple(self.network.input_dims)
        if tuple(self.data.model_dims) != dims:
            raise ValueError(f"network input dims {dims} differ from data dims {tuple(self.data.model_dims)}")
        if tuple(self.bootstrap.seg_network.input_dims) != dims:
            raise ValueError(f"segmentation input dims {tuple(self.bootstrap.seg_network.input_dims)} differ from {dims}")
        c_c = self.network.dict_channels[2]
        if self.bootstrap.seg_network.feature_channels != c_c:
            raise ValueError(f"segmentation feature channels {self.bootstrap.seg_network.feature_channels} "
                             f"must equal C_c={c_c}")
        if self.bootstrap.K_c != self.network.dict_sizes[2]:
            raise ValueError(f"bootstrap K_c={self.bootstrap.K_c} differs from network K_c={self.network.dict_sizes[2]}")
        if self.profile.startswith("full") and self.run.epochs > 1000:
            raise ValueError("full profile trains for at most 1000 epochs")
        return self

    @property
    def deterministic(self) -> bool:
        return self.run.deterministic or deterministic_requested()

    def echo(self) -> dict:
        return self.model_dump(mode="json")

    def write_echo(self, output_dir) -> Path:
        path = Path(output_dir) / "config.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        json.dump(self.echo(), open(path, "w"), indent=2)
        return path


_FULL_NETWORK = {
    "channels": [32, 64, 128, 256],
    "dict_sizes": [1024, 1024, 512],
    "dict_channels": [256, 128, 256],
    "input_dims": [128, 128, 102],
}
_FULL_SEG = {"channels": [32, 64, 128], "bottleneck_channels": 256, "input_dims": [128, 128, 102]}

PROFILES: Dict[str, dict] = {
    "desk": {},
    "full": {
        "network": _FULL_NETWORK,
        "loss": {"lambda_Q": 1.0, "lambda_S": 1.0, "lambda_D": 1.0, "lambda_B": 50.0, "beta": 0.25},
        "optimizer": {"lr": 1e-4},
        "data": {"dims": [128, 128, 102], "n_pairs": 108},
        "bootstrap": {"K_c": 512, "seg_network": _FULL_SEG},
        "run": {"epochs": 1000, "batch_size": 4},
    },
    # 字典大小消融中最优的一组：K_v=512, K_c=1024
    "full-sweep-best": {
        "network": {**_FULL_NETWORK, "dict_sizes": [512, 1024, 1024]},
        "loss": {"lambda_Q": 1.0, "lambda_S": 1.0, "lambda_D": 1.0, "lambda_B": 50.0, "beta": 0.25},
        "optimizer": {"lr": 1e-4},
        "data": {"dims": [128, 128, 102], "n_pairs": 108},
        "bootstrap": {"K_c": 1024, "seg_network": _FULL_SEG},
        "run": {"epochs": 1000, "batch_size": 4},
    },
    "smoke": {
        "network": {"channels": [4, 8], "n_res_blocks": 2, "convs_per_block": 2, "dict_sizes": [8, 8, 4],
                    "dict_channels": [8, 4, 8], "input_dims": [16, 16, 16]},
        "data": {"dims": [16, 16, 16], "n_pairs": 6, "deform_amplitude": 0.5},
        "bootstrap": {"seg_epochs": 2, "K_c": 4, "feature_cap": 1000,
                      "seg_network": {"channels": [4, 8], "convs_per_block": 1, "bottleneck_channels": 8,
                                      "input_dims": [16, 16, 16]}},
        "run": {"epochs": 2, "batch_size": 2, "seeds": [0]},
    },
}


def deep_merge(base: dict, override: dict) -> dict:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def build_config(data: Optional[dict] = None, profile: Optional[str] = None) -> TrainConfig:
    data = dict(data or {})
    name = profile or data.pop("profile", "desk")
    data.pop("profile", None)
    if name not in PROFILES:
        raise ConfigError(f"unknown profile '{name}', expected one of {sorted(PROFILES)}")
    try:
        return TrainConfig(profile=name, **deep_merge(PROFILES[name], data))
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration:\n{exc}") from exc


def load_train_config(path, profile: Optional[str] = None) -> TrainConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return build_config(data, profile)
