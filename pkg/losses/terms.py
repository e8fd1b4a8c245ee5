"""Similarity, overlap and smoothness terms.

Every term accepts batched tensors ``(B, C, X, Y, Z)`` or the volume types,
and returns a 0-dim tensor so it can sit inside the training graph.
"""
from typing import Union

import numpy as np
import torch

from transform.ddf import DisplacementField
from utils.errors import ShapeMismatchError, check_same_shape
from volume_core.types import Volume3D

DICE_EPS = 1e-6

VolumeLike = Union[Volume3D, torch.Tensor]


def as_batch(volume: VolumeLike, channels: int = 1) -> torch.Tensor:
    """Volume3D (X, Y, Z) or DisplacementField (3, X, Y, Z) -> (1, C, X, Y, Z); tensors pass through."""
    if isinstance(volume, torch.Tensor):
        t = volume
    else:
        t = torch.as_tensor(np.array(volume.data), dtype=torch.float64)
    while t.dim() < 5:
        t = t.unsqueeze(0)
    if t.shape[1] != channels:
        raise ShapeMismatchError(f"expected {channels} channels, got {tuple(t.shape)}")
    return t


def ssd_loss(warped: VolumeLike, fixed: VolumeLike) -> torch.Tensor:
    """Mean squared intensity difference."""
    a, b = as_batch(warped), as_batch(fixed)
    check_same_shape(a.shape, b.shape, "ssd_loss")
    return ((a - b) ** 2).mean()


def dice_loss(warped_mask: VolumeLike, fixed_mask: VolumeLike, eps: float = DICE_EPS) -> torch.Tensor:
    """-(2Σab + ε) / (Σa + Σb + ε), averaged over the batch."""
    a, b = as_batch(warped_mask), as_batch(fixed_mask)
    check_same_shape(a.shape, b.shape, "dice_loss")
    dims = tuple(range(1, a.dim()))
    intersection = (a * b).sum(dim=dims)
    union = a.sum(dim=dims) + b.sum(dim=dims)
    return (-(2.0 * intersection + eps) / (union + eps)).mean()


def _second_derivatives(u: torch.Tensor):
    """Central second differences of (B, 3, X, Y, Z) on the interior [1:-1]^3."""
    c = (slice(None), slice(None), slice(1, -1), slice(1, -1), slice(1, -1))

    def shifted(dx, dy, dz):
        X, Y, Z = u.shape[2:]
        return u[:, :, 1 + dx:X - 1 + dx, 1 + dy:Y - 1 + dy, 1 + dz:Z - 1 + dz]

    centre = u[c]
    dxx = shifted(1, 0, 0) - 2 * centre + shifted(-1, 0, 0)
    dyy = shifted(0, 1, 0) - 2 * centre + shifted(0, -1, 0)
    dzz = shifted(0, 0, 1) - 2 * centre + shifted(0, 0, -1)
    dxy = (shifted(1, 1, 0) - shifted(1, -1, 0) - shifted(-1, 1, 0) + shifted(-1, -1, 0)) / 4
    dxz = (shifted(1, 0, 1) - shifted(1, 0, -1) - shifted(-1, 0, 1) + shifted(-1, 0, -1)) / 4
    dyz = (shifted(0, 1, 1) - shifted(0, 1, -1) - shifted(0, -1, 1) + shifted(0, -1, -1)) / 4
    return dxx, dyy, dzz, dxy, dxz, dyz


def bending_energy(ddf: Union[DisplacementField, torch.Tensor]) -> torch.Tensor:
    """Mean over interior voxels and channels of Σ (∂²u/∂xi∂xj)², mixed terms counted twice (voxel units)."""
    u = as_batch(ddf, channels=3)
    if min(u.shape[2:]) < 3:
        raise ShapeMismatchError(f"bending energy needs >= 3 voxels per axis, got {tuple(u.shape[2:])}")
    dxx, dyy, dzz, dxy, dxz, dyz = _second_derivatives(u)
    energy = dxx ** 2 + dyy ** 2 + dzz ** 2 + 2 * (dxy ** 2 + dxz ** 2 + dyz ** 2)
    return energy.mean()
