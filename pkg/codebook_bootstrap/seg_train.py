from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
from loguru import logger
from tqdm.auto import tqdm

from losses.terms import dice_loss
from metrics_eval.metrics import dsc
from regnet.config import SegNetworkConfig
from regnet.seg_model import SegModel, seg_forward
from utils.errors import NonFiniteLossError, ShapeMismatchError
from volume_core.types import MaskVolume, RegistrationSample, Volume3D

from .config import BootstrapConfig


def segmentation_pairs(samples: Sequence[RegistrationSample]) -> List[Tuple[Volume3D, MaskVolume]]:
    """Both images of every pair with their gland masks."""
    pairs = []
    for s in samples:
        pairs.append((s.moving, s.moving_mask))
        pairs.append((s.fixed, s.fixed_mask))
    return pairs


def _stack(items: Sequence, dtype) -> torch.Tensor:
    return torch.as_tensor(np.stack([np.asarray(v.data) for v in items]), dtype=dtype)[:, None]


def train_segmentation(pairs: Sequence[Tuple[Volume3D, MaskVolume]], config: BootstrapConfig,
                       seg_config: Optional[SegNetworkConfig] = None) -> SegModel:
    """Dice-only training of the segmentation U-Net."""
    seg_config = seg_config or config.seg_network
    if not pairs:
        raise ValueError("segmentation training needs at least one image")
    for image, _ in pairs:
        if image.dims != tuple(seg_config.input_dims):
            raise ShapeMismatchError(f"image dims {image.dims} do not match segmentation input dims "
                                     f"{tuple(seg_config.input_dims)}")

    torch.manual_seed(config.seed)
    model = SegModel(seg_config)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.seg_lr)
    images = _stack([p[0] for p in pairs], torch.float32)
    masks = _stack([p[1] for p in pairs], torch.float32)
    rng = np.random.default_rng(config.seed)

    model.train()
    progress = tqdm(range(config.seg_epochs), desc="seg", leave=False)
    for epoch in progress:
        order = rng.permutation(len(pairs))
        epoch_loss = 0.0
        for start in range(0, len(order), config.seg_batch_size):
            idx = torch.as_tensor(order[start:start + config.seg_batch_size])
            logits, _ = model(images[idx])
            loss = dice_loss(torch.sigmoid(logits), masks[idx])
            if not torch.isfinite(loss):
                raise NonFiniteLossError(f"segmentation loss became {float(loss)} at epoch {epoch}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss) * len(idx)
        progress.set_postfix(dice_loss=f"{epoch_loss / len(pairs):.4f}")
        logger.debug(f"seg epoch {epoch} dice_loss={epoch_loss / len(pairs):.6f}")
    model.eval()
    return model


def segmentation_dsc(model: SegModel, pairs: Sequence[Tuple[Volume3D, MaskVolume]]) -> float:
    scores = []
    for image, mask in pairs:
        soft, _ = seg_forward(model, image)
        scores.append(dsc(soft.thresholded(), mask.thresholded()))
    return float(np.mean(scores))
