"""Trilinear resampling of volumes, masks and points through a displacement field.

Coordinates are clamped to the valid grid (clamp-to-edge), which keeps every
sample finite and the warp differentiable with respect to both the values and
the field.
"""
from dataclasses import dataclass
from enum import Enum
from typing import Union

import numpy as np
import torch
from numpy.typing import NDArray

from utils.errors import NonFiniteError, ShapeMismatchError
from volume_core.types import MaskKind, MaskVolume, Volume3D

from .ddf import DisplacementField


class MaskMode(str, Enum):
    Soft = "soft"
    Threshold = "threshold-0.5"


@dataclass(frozen=True)
class ResampleSpec:
    boundary: str = "clamp"
    interpolation: str = "trilinear"
    mask_mode: MaskMode = MaskMode.Soft

    def __post_init__(self):
        if self.boundary != "clamp":
            raise ValueError(f"unsupported boundary mode {self.boundary}")
        if self.interpolation != "trilinear":
            raise ValueError(f"unsupported interpolation {self.interpolation}")
        object.__setattr__(self, "mask_mode", MaskMode(self.mask_mode))


def identity_grid(dims, *, dtype=torch.float64, device=None) -> torch.Tensor:
    """Voxel coordinates of every grid point, shape (3, X, Y, Z)."""
    axes = [torch.arange(n, dtype=dtype, device=device) for n in dims]
    return torch.stack(torch.meshgrid(*axes, indexing="ij"))


def trilinear_sample(volume: torch.Tensor, coords: torch.Tensor) -> torch.Tensor:
    """Sample ``volume`` (B, C, X, Y, Z) at voxel ``coords`` (B, 3, ...) with clamped trilinear interpolation."""
    B, C = volume.shape[:2]
    sizes = volume.shape[2:]
    out_shape = coords.shape[2:]
    flat = volume.reshape(B, C, -1)

    lower, upper, weights = [], [], []
    for axis in range(3):
        # 非有限坐标只影响索引，损失中的非有限值仍然保留
        c = torch.nan_to_num(coords[:, axis]).clamp(0, sizes[axis] - 1)
        c0 = torch.floor(c)
        i0 = c0.long()
        lower.append(i0)
        upper.append(torch.clamp(i0 + 1, max=sizes[axis] - 1))
        weights.append(c - c0)

    result = None
    for ix, wx in ((lower[0], 1 - weights[0]), (upper[0], weights[0])):
        for iy, wy in ((lower[1], 1 - weights[1]), (upper[1], weights[1])):
            for iz, wz in ((lower[2], 1 - weights[2]), (upper[2], weights[2])):
                index = (ix * sizes[1] + iy) * sizes[2] + iz
                index = index.reshape(B, 1, -1).expand(B, C, -1)
                values = torch.gather(flat, 2, index).reshape(B, C, *out_shape)
                term = (wx * wy * wz).unsqueeze(1) * values
                result = term if result is None else result + term
    return result


def warp(volume: torch.Tensor, ddf: torch.Tensor) -> torch.Tensor:
    """Warp a (B, C, X, Y, Z) tensor with a (B, 3, X, Y, Z) voxel-unit field: ``out[p] = volume[p + u(p)]``."""
    if volume.shape[0] != ddf.shape[0] or volume.shape[2:] != ddf.shape[2:] or ddf.shape[1] != 3:
        raise ShapeMismatchError(f"cannot warp {tuple(volume.shape)} with field {tuple(ddf.shape)}")
    grid = identity_grid(volume.shape[2:], dtype=ddf.dtype, device=ddf.device)
    return trilinear_sample(volume, grid.unsqueeze(0) + ddf)


def resample(volume: Union[Volume3D, MaskVolume], ddf: DisplacementField,
             spec: ResampleSpec = ResampleSpec()) -> Union[Volume3D, MaskVolume]:
    if volume.dims != ddf.dims:
        raise ShapeMismatchError(f"volume dims {volume.dims} differ from field dims {ddf.dims}")
    if not np.all(np.isfinite(ddf.data)):
        raise NonFiniteError("displacement field contains non-finite values")
    is_mask = isinstance(volume, MaskVolume)
    if spec.mask_mode is MaskMode.Threshold and not is_mask:
        raise ValueError("threshold mask mode only applies to mask volumes")

    dtype = torch.float32 if volume.data.dtype == np.float32 else torch.float64
    moving = torch.as_tensor(np.array(volume.data), dtype=dtype)[None, None]
    field = torch.as_tensor(np.array(ddf.data), dtype=dtype)[None]
    with torch.no_grad():
        warped = warp(moving, field)[0, 0].numpy()

    if not is_mask:
        return volume.with_data(warped)
    if spec.mask_mode is MaskMode.Threshold:
        return MaskVolume((warped >= 0.5).astype(warped.dtype), volume.spacing, volume.origin, MaskKind.Binary)
    return MaskVolume(np.clip(warped, 0.0, 1.0), volume.spacing, volume.origin, MaskKind.Soft)


def interpolate_field(ddf: DisplacementField, voxel: NDArray) -> NDArray[np.float64]:
    """Trilinear value of the field at fractional voxel positions (N, 3) -> (N, 3)."""
    points = torch.as_tensor(np.asarray(voxel, dtype=np.float64).reshape(-1, 3).T.copy())
    field = torch.as_tensor(np.array(ddf.data), dtype=torch.float64)[None]
    with torch.no_grad():
        values = trilinear_sample(field, points[None, :, :, None, None])
    return values[0, :, :, 0, 0].T.numpy()


def warp_points(points_mm: NDArray, ddf: DisplacementField) -> NDArray[np.float64]:
    points_mm = np.asarray(points_mm, dtype=np.float64).reshape(-1, 3)
    spacing = np.asarray(ddf.spacing)
    origin = np.asarray(ddf.origin)
    voxel = (points_mm - origin) / spacing
    upper = np.asarray(ddf.dims) - 1
    outside = np.any((voxel < 0) | (voxel > upper), axis=1)
    if np.any(outside):
        raise ValueError(f"points outside the field extent: {points_mm[outside].tolist()}")
    moved = voxel + interpolate_field(ddf, voxel)
    return moved * spacing + origin


def warp_point(point_fixed, ddf: DisplacementField) -> NDArray[np.float64]:
    """Map a fixed-image point (mm) to its moving-image location (mm) through ``ddf``."""
    return warp_points(np.asarray(point_fixed, dtype=np.float64).reshape(1, 3), ddf)[0]
