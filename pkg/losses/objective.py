from dataclasses import dataclass, fields
from typing import Dict, Mapping, Optional, Union

import torch

from transform.ddf import DisplacementField
from transform.resample import warp
from volume_core.types import RegistrationSample

from .terms import as_batch, bending_energy, dice_loss, ssd_loss
from .weights import LossWeights

LOSS_LOG_COLUMNS = ["step", "L_V", "L_H", "L_C", "L_SSD", "L_Dice", "L_Bend", "total"]


@dataclass
class LossComponents:
    L_V: torch.Tensor
    L_H: torch.Tensor
    L_C: torch.Tensor
    L_SSD: torch.Tensor
    L_Dice: torch.Tensor
    L_Bend: torch.Tensor

    @property
    def quant(self) -> torch.Tensor:
        return self.L_V + self.L_H + self.L_C

    def as_row(self, step: int, total: torch.Tensor) -> Dict[str, float]:
        row = {"step": step}
        row.update({f.name: float(getattr(self, f.name).detach()) for f in fields(self)})
        row["total"] = float(total.detach())
        return row


def _zero_like(ref: torch.Tensor) -> torch.Tensor:
    return ref.new_zeros(())


def compute_components(moving: torch.Tensor, fixed: torch.Tensor, moving_mask: torch.Tensor,
                       fixed_mask: torch.Tensor, ddf: torch.Tensor,
                       quant_losses: Optional[Mapping[str, torch.Tensor]] = None) -> LossComponents:
    """Warp moving image and mask through ``ddf`` and evaluate every term; missing quantizers count 0."""
    quant_losses = quant_losses or {}
    zero = _zero_like(ddf)
    warped = warp(moving, ddf)
    warped_mask = warp(moving_mask, ddf).clamp(0.0, 1.0)
    return LossComponents(
        L_V=quant_losses.get("vanilla", zero),
        L_H=quant_losses.get("hierarchical", zero),
        L_C=quant_losses.get("collaborative", zero),
        L_SSD=ssd_loss(warped, fixed),
        L_Dice=dice_loss(warped_mask, fixed_mask),
        L_Bend=bending_energy(ddf),
    )


def combine_losses(components: LossComponents, weights: LossWeights) -> torch.Tensor:
    weights.ensure_valid()
    return (weights.lambda_Q * components.quant + weights.lambda_S * components.L_SSD
            + weights.lambda_D * components.L_Dice + weights.lambda_B * components.L_Bend)


def total_loss(sample: RegistrationSample, ddf: Union[DisplacementField, torch.Tensor],
               quant_losses: Mapping[str, torch.Tensor], weights: LossWeights) -> torch.Tensor:
    field = as_batch(ddf, channels=3)
    dtype = field.dtype
    moving, fixed, moving_mask, fixed_mask = (
        as_batch(v).to(dtype) for v in (sample.moving, sample.fixed, sample.moving_mask, sample.fixed_mask))
    return combine_losses(compute_components(moving, fixed, moving_mask, fixed_mask, field, quant_losses), weights)
