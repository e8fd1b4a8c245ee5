from typing import List, Tuple

from loguru import logger
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

QUANTIZER_NAMES = ("vanilla", "hierarchical", "collaborative")
_ALIASES = {"v": "vanilla", "h": "hierarchical", "c": "collaborative"}


def normalize_quantizers(names) -> List[str]:
    result = []
    for name in names:
        key = _ALIASES.get(str(name).lower(), str(name).lower())
        if key not in QUANTIZER_NAMES:
            raise ValueError(f"unknown quantizer '{name}', expected one of {QUANTIZER_NAMES}")
        if key not in result:
            result.append(key)
    return [n for n in QUANTIZER_NAMES if n in result]


class NetworkConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    base_channels: int = 8
    # 为空时按 base_channels 逐级翻倍
    channels: List[int] = []
    n_res_blocks: int = 4
    convs_per_block: int = 3
    # (K_v, K_h, K_c)
    dict_sizes: Tuple[int, int, int] = (64, 64, 32)
    # (C_v, C_h, C_c)
    dict_channels: Tuple[int, int, int] = (64, 32, 64)
    enabled_quantizers: List[str] = list(QUANTIZER_NAMES)
    input_dims: Tuple[int, int, int] = (32, 32, 24)

    @field_validator("enabled_quantizers", mode="before")
    @classmethod
    def _normalize(cls, value):
        return normalize_quantizers(value or [])

    @model_validator(mode="after")
    def _check(self):
        if not self.channels:
            self.channels = [self.base_channels * 2 ** i for i in range(self.n_res_blocks)]
        if len(self.channels) != self.n_res_blocks:
            raise ValueError(f"{len(self.channels)} stage channels for {self.n_res_blocks} residual blocks")
        if self.n_res_blocks < 2:
            raise ValueError("the network needs at least 2 encoder stages")
        if self.convs_per_block < 1:
            raise ValueError("convs_per_block must be >= 1")
        if any(k < 1 for k in self.dict_sizes) or any(c < 1 for c in self.dict_channels):
            raise ValueError("dictionary sizes and channels must be >= 1")
        c_v, c_h, c_c = self.dict_channels
        if c_v != c_c:
            raise ValueError(f"C_v ({c_v}) must equal C_c ({c_c}): their outputs are concatenated")
        if c_h != self.channels[-2]:
            raise ValueError(f"C_h ({c_h}) must equal the channels of the hierarchical stage ({self.channels[-2]})")
        factor = 2 ** self.depth
        if any(d % factor for d in self.input_dims):
            logger.warning(f"input dims {self.input_dims} are not divisible by {factor}; stages use ceil pooling")
        return self

    @property
    def depth(self) -> int:
        return self.n_res_blocks - 1

    @property
    def total_encoder_convs(self) -> int:
        return self.n_res_blocks * self.convs_per_block

    def uses(self, name: str) -> bool:
        return name in self.enabled_quantizers

    def with_quantizers(self, names) -> "NetworkConfig":
        return self.model_copy(update={"enabled_quantizers": normalize_quantizers(names)})

    def bottleneck_dims(self) -> Tuple[int, int, int]:
        dims = self.input_dims
        for _ in range(self.depth):
            dims = tuple((d + 1) // 2 for d in dims)
        return dims  # type: ignore[return-value]


class SegNetworkConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    channels: List[int] = [8, 16, 32]
    convs_per_block: int = 2
    bottleneck_channels: int = 64
    input_dims: Tuple[int, int, int] = (32, 32, 24)
    zero_init_head: bool = True
    # 取特征的编码层，-1 表示最深的 bottleneck
    feature_layer: int = -1

    @property
    def depth(self) -> int:
        return len(self.channels)

    @property
    def feature_channels(self) -> int:
        stages = list(self.channels) + [self.bottleneck_channels]
        return stages[self.feature_layer]


def full_network_config(input_dims=(128, 128, 102)) -> NetworkConfig:
    return NetworkConfig(channels=[32, 64, 128, 256], dict_sizes=(1024, 1024, 512),
                         dict_channels=(256, 128, 256), input_dims=input_dims)
