"""U-Net segmentation network used only to bootstrap the collaborative codebook."""
from typing import List, Tuple

import numpy as np
import torch
from torch import nn

from utils.errors import ShapeMismatchError
from volume_core.types import MaskKind, MaskVolume, Volume3D
from vq_core.quantizer import FeatureMap

from .blocks import ConvNormAct, ResidualBlock, UpBlock, pool, zero_init
from .config import SegNetworkConfig


class SegModel(nn.Module):
    def __init__(self, config: SegNetworkConfig):
        super().__init__()
        self.config = config
        ch = list(config.channels)
        self.encoder = nn.ModuleList(
            ResidualBlock(i, o, config.convs_per_block) for i, o in zip([1] + ch[:-1], ch))
        self.bottleneck = ConvNormAct(ch[-1], config.bottleneck_channels)
        ups = [config.bottleneck_channels] + ch[::-1]
        self.decoder = nn.ModuleList(UpBlock(i, o) for i, o in zip(ups[:-1], ups[1:]))
        self.head = nn.Conv3d(ch[0], 1, 3, padding=1)
        if config.zero_init_head:
            zero_init(self.head)

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, List[torch.Tensor]]:
        """Returns logits (B, 1, X, Y, Z) and the encoder features, deepest (bottleneck) last."""
        skips = []
        h = x
        for block in self.encoder:
            h = block(h)
            skips.append(h)
            h = pool(h)
        h = self.bottleneck(h)
        features = skips + [h]
        for block, skip in zip(self.decoder, reversed(skips)):
            h = block(h, skip)
        return self.head(h), features

    def features(self, x: torch.Tensor) -> torch.Tensor:
        return self.forward(x)[1][self.config.feature_layer]


def seg_forward(seg_model: SegModel, image: Volume3D) -> Tuple[MaskVolume, FeatureMap]:
    if image.dims != tuple(seg_model.config.input_dims):
        raise ShapeMismatchError(f"image dims {image.dims} do not match segmentation input dims "
                                 f"{tuple(seg_model.config.input_dims)}")
    dtype = next(seg_model.parameters()).dtype
    x = torch.as_tensor(np.array(image.data), dtype=dtype)[None, None]
    was_training = seg_model.training
    seg_model.eval()
    with torch.no_grad():
        logits, features = seg_model(x)
    seg_model.train(was_training)
    soft = torch.sigmoid(logits)[0, 0].double().numpy()
    mask = MaskVolume(soft, image.spacing, image.origin, MaskKind.Soft)
    return mask, FeatureMap.from_channel_first(features[seg_model.config.feature_layer][0])
