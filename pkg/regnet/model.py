"""Registration U-Net with vanilla, hierarchical and collaborative quantizers.

Wiring (4 stages by default)::

    [moving, fixed] -> E1 -> E2 -> E3 -> E4 -> E5a -> Q_c ─┐
                             │           └──> E5b -> Q_v ─┴─ concat -> decoder -> DDF
                             └─ Q_h(E3) + up(E4) ───────────── skip

The last encoder stage feeds both heads; the stage before it is the
hierarchical skip. A disabled quantizer is an identity pass-through with zero loss.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from transform.ddf import DisplacementField
from utils.errors import ShapeMismatchError
from volume_core.types import RegistrationSample, Volume3D
from vq_core.codebook import CodebookName
from vq_core.quantizer import DEFAULT_BETA, IdentityQuantizer, VectorQuantizer

from .blocks import ConvNormAct, ResidualBlock, UpBlock, pool, zero_init
from .config import NetworkConfig


@dataclass
class EncoderFeatures:
    stages: List[torch.Tensor]
    head_c: torch.Tensor
    head_v: torch.Tensor


@dataclass
class RegOutput:
    ddf: torch.Tensor
    quant_losses: Dict[str, torch.Tensor]
    indices: Dict[str, Optional[torch.Tensor]] = field(default_factory=dict)

    @property
    def quant_total(self) -> torch.Tensor:
        return sum(self.quant_losses.values(), self.ddf.new_zeros(()))


def _make_quantizer(config: NetworkConfig, name: CodebookName, size: int, dim: int, beta: float) -> nn.Module:
    if config.uses(name.value):
        return VectorQuantizer(size, dim, name=name, beta=beta)
    return IdentityQuantizer(name)


class RegModel(nn.Module):
    def __init__(self, config: NetworkConfig, beta: float = DEFAULT_BETA):
        super().__init__()
        self.config = config
        ch = config.channels
        k_v, k_h, k_c = config.dict_sizes
        c_v, c_h, c_c = config.dict_channels

        in_channels = [2] + ch[:-1]
        self.encoder = nn.ModuleList(
            ResidualBlock(i, o, config.convs_per_block) for i, o in zip(in_channels, ch))
        self.head_c = nn.Conv3d(ch[-1], c_c, 3, padding=1)
        self.head_v = nn.Conv3d(ch[-1], c_v, 3, padding=1)
        self.hier_proj = nn.Conv3d(ch[-1], ch[-2], 1)

        self.bottleneck = ConvNormAct(c_c + c_v, ch[-1])
        self.decoder = nn.ModuleList(UpBlock(ch[level + 1], ch[level]) for level in reversed(range(len(ch) - 1)))
        self.ddf_head = zero_init(nn.Conv3d(ch[0], 3, 3, padding=1))

        # 码本最后创建，卷积层的随机初始化与量化器开关无关
        self.quantizers = nn.ModuleDict({
            CodebookName.Vanilla.value: _make_quantizer(config, CodebookName.Vanilla, k_v, c_v, beta),
            CodebookName.Hierarchical.value: _make_quantizer(config, CodebookName.Hierarchical, k_h, c_h, beta),
            CodebookName.Collaborative.value: _make_quantizer(config, CodebookName.Collaborative, k_c, c_c, beta),
        })

    def quantizer(self, name: str) -> nn.Module:
        return self.quantizers[CodebookName(name).value]

    def vector_quantizers(self) -> Dict[str, VectorQuantizer]:
        return {k: q for k, q in self.quantizers.items() if isinstance(q, VectorQuantizer)}

    def encode(self, x: torch.Tensor) -> EncoderFeatures:
        stages = []
        h = x
        for level, block in enumerate(self.encoder):
            if level > 0:
                h = pool(h)
            h = block(h)
            stages.append(h)
        return EncoderFeatures(stages, self.head_c(stages[-1]), self.head_v(stages[-1]))

    def hierarchical_skip(self, quantized_stage: torch.Tensor, deepest: torch.Tensor) -> torch.Tensor:
        up = F.interpolate(self.hier_proj(deepest), size=quantized_stage.shape[2:], mode="trilinear",
                           align_corners=False)
        return quantized_stage + up

    def decode(self, bottleneck: torch.Tensor, skips: List[torch.Tensor]) -> torch.Tensor:
        d = self.bottleneck(bottleneck)
        for block, skip in zip(self.decoder, reversed(skips)):
            d = block(d, skip)
        return self.ddf_head(d)

    def forward(self, moving: torch.Tensor, fixed: torch.Tensor) -> RegOutput:
        expected = tuple(self.config.input_dims)
        if tuple(moving.shape[2:]) != expected or tuple(fixed.shape[2:]) != expected:
            raise ShapeMismatchError(
                f"inputs {tuple(moving.shape[2:])}/{tuple(fixed.shape[2:])} do not match model input dims {expected}")
        feats = self.encode(torch.cat([moving, fixed], dim=1))

        z_c, loss_c, idx_c = self.quantizers[CodebookName.Collaborative.value](feats.head_c)
        z_v, loss_v, idx_v = self.quantizers[CodebookName.Vanilla.value](feats.head_v)
        z_h, loss_h, idx_h = self.quantizers[CodebookName.Hierarchical.value](feats.stages[-2])

        skips = list(feats.stages[:-2]) + [self.hierarchical_skip(z_h, feats.stages[-1])]
        ddf = self.decode(torch.cat([z_c, z_v], dim=1), skips)
        return RegOutput(
            ddf=ddf,
            quant_losses={"vanilla": loss_v, "hierarchical": loss_h, "collaborative": loss_c},
            indices={"vanilla": idx_v, "hierarchical": idx_h, "collaborative": idx_c},
        )


def volume_tensor(volume: Volume3D, dtype=torch.float32) -> torch.Tensor:
    """(X, Y, Z) volume -> (1, 1, X, Y, Z) tensor."""
    return torch.as_tensor(np.array(volume.data), dtype=dtype)[None, None]


def sample_tensors(sample: RegistrationSample, dtype=torch.float32) -> Tuple[torch.Tensor, ...]:
    return (volume_tensor(sample.moving, dtype), volume_tensor(sample.fixed, dtype),
            volume_tensor(sample.moving_mask, dtype), volume_tensor(sample.fixed_mask, dtype))


def register_sample(model: RegModel, sample: RegistrationSample) -> Tuple[DisplacementField, Dict[str, float]]:
    """Inference on one pair; returns the DDF on the fixed grid and per-quantizer losses."""
    if sample.dims != tuple(model.config.input_dims):
        raise ShapeMismatchError(f"sample dims {sample.dims} do not match model input dims {model.config.input_dims}")
    dtype = next(model.parameters()).dtype
    moving, fixed, _, _ = sample_tensors(sample, dtype)
    was_training = model.training
    model.eval()
    with torch.no_grad():
        out = model(moving, fixed)
    model.train(was_training)
    ddf = DisplacementField(out.ddf[0].double().numpy(), sample.spacing, sample.fixed.origin)
    return ddf, {k: float(v) for k, v in out.quant_losses.items()}
