from pydantic import BaseModel, ConfigDict, Field

from regnet.config import SegNetworkConfig


class BootstrapConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seg_epochs: int = Field(100, ge=1)
    seg_lr: float = Field(1e-3, gt=0)
    seg_batch_size: int = Field(4, ge=1)
    # M：K-means 输入向量上限
    feature_cap: int = Field(100_000, ge=1)
    K_c: int = Field(32, ge=1)
    seed: int = 0
    kmeans_max_iters: int = Field(100, ge=1)
    seg_network: SegNetworkConfig = SegNetworkConfig()
