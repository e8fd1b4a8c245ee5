from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional

import numpy as np
import torch
from loguru import logger

from metrics_eval.metrics import centroid_distance, dsc, mse, neg_jacobian_fraction
from metrics_eval.table import Table
from regnet.checkpoint import load_checkpoint
from regnet.model import RegModel
from transform.ddf import DisplacementField, save_ddf
from transform.resample import MaskMode, ResampleSpec, resample, warp_points
from utils.errors import ShapeMismatchError
from volume_core.types import LandmarkSet, MaskVolume, Volume3D
from volume_core.volume_io import load_landmarks, load_mask, load_volume, save_volume


@dataclass
class PairInputs:
    moving: Volume3D
    fixed: Volume3D
    moving_mask: Optional[MaskVolume] = None
    fixed_mask: Optional[MaskVolume] = None
    moving_landmarks: Optional[LandmarkSet] = None
    fixed_landmarks: Optional[LandmarkSet] = None

    @classmethod
    def load(cls, moving, fixed, moving_mask=None, fixed_mask=None, moving_landmarks=None,
             fixed_landmarks=None) -> "PairInputs":
        return cls(
            load_volume(moving), load_volume(fixed),
            load_mask(moving_mask) if moving_mask else None,
            load_mask(fixed_mask) if fixed_mask else None,
            load_landmarks(moving_landmarks) if moving_landmarks else None,
            load_landmarks(fixed_landmarks) if fixed_landmarks else None,
        )


def predict_pair(model: RegModel, pair: PairInputs) -> DisplacementField:
    dims = tuple(model.config.input_dims)
    for name, vol in (("moving", pair.moving), ("fixed", pair.fixed)):
        if vol.dims != dims:
            raise ShapeMismatchError(f"{name} dims {vol.dims} do not match checkpoint input dims {dims}")
    dtype = next(model.parameters()).dtype
    moving = torch.as_tensor(np.array(pair.moving.data), dtype=dtype)[None, None]
    fixed = torch.as_tensor(np.array(pair.fixed.data), dtype=dtype)[None, None]
    model.eval()
    with torch.no_grad():
        out = model(moving, fixed)
    return DisplacementField(out.ddf[0].double().numpy(), pair.fixed.spacing, pair.fixed.origin)


def pair_metrics(pair: PairInputs, ddf: DisplacementField) -> Dict[str, float]:
    """Whatever the supplied inputs allow: MSE and folding always, DSC/CD with masks, TRE with landmarks."""
    metrics = {"MSE": mse(resample(pair.moving, ddf), pair.fixed), "NegJac": neg_jacobian_fraction(ddf)}
    if pair.moving_mask is not None and pair.fixed_mask is not None:
        warped = resample(pair.moving_mask, ddf, ResampleSpec(mask_mode=MaskMode.Threshold))
        fixed_mask = pair.fixed_mask.thresholded()
        metrics["DSC"] = dsc(warped, fixed_mask)
        if warped.voxel_count and fixed_mask.voxel_count:
            metrics["CD"] = centroid_distance(warped, fixed_mask)
    if pair.moving_landmarks is not None and pair.fixed_landmarks is not None:
        if not pair.moving_landmarks.matches(pair.fixed_landmarks):
            raise ValueError("moving and fixed landmark labels differ")
        mapped = warp_points(pair.fixed_landmarks.points, ddf)
        metrics["TRE"] = float(np.mean(np.linalg.norm(mapped - pair.moving_landmarks.points, axis=1)))
    return metrics


def register_files(checkpoint, moving, fixed, out_ddf, warped_path=None, **optional) -> Dict[str, float]:
    """Register one pair of files; writes the DDF and the warped moving image, returns the available metrics."""
    if not Path(checkpoint).exists():
        raise FileNotFoundError(f"checkpoint not found: {checkpoint}")
    model = load_checkpoint(checkpoint)
    pair = PairInputs.load(moving, fixed, **optional)
    ddf = predict_pair(model, pair)
    save_ddf(out_ddf, ddf)
    warped_path = warped_path or str(Path(out_ddf).with_name("warped_moving.vol"))
    save_volume(warped_path, resample(pair.moving, ddf))
    logger.success(f"DDF written to {out_ddf}, warped moving image to {warped_path}")

    metrics = pair_metrics(pair, ddf)
    table = Table(["Metric", "Value"])
    for name, value in metrics.items():
        table.add_row([name + (" (mm)" if name in ("CD", "TRE") else ""), f"{value:.6g}"])
    table.pretty_print()
    return metrics
