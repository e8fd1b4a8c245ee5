from typing import List

import numpy as np
from numpy.typing import NDArray

from transform.ddf import DisplacementField
from transform.jacobian import folding_mask, interior
from transform.resample import warp_points
from utils.errors import ShapeMismatchError, check_same_shape
from volume_core.types import MaskVolume, RegistrationSample, Volume3D


def _binary(mask: MaskVolume, which: str) -> NDArray[np.bool_]:
    data = np.asarray(mask.data)
    if not np.all((data == 0) | (data == 1)):
        raise ValueError(f"dsc expects binary masks, {which} has values outside {{0, 1}}")
    return data.astype(bool)


def dsc(a: MaskVolume, b: MaskVolume) -> float:
    check_same_shape(a.dims, b.dims, "dsc")
    A, B = _binary(a, "a"), _binary(b, "b")
    total = int(A.sum()) + int(B.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(A, B).sum()) / total


def centroid_mm(mask: MaskVolume) -> NDArray[np.float64]:
    w = np.asarray(mask.data, dtype=np.float64)
    total = w.sum()
    if total <= 0:
        raise ValueError("centroid of an empty mask is undefined")
    grids = np.meshgrid(*[np.arange(n, dtype=np.float64) for n in w.shape], indexing="ij")
    voxel = np.array([(g * w).sum() / total for g in grids])
    return mask.voxel_to_mm(voxel)


def centroid_distance(a: MaskVolume, b: MaskVolume) -> float:
    check_same_shape(a.dims, b.dims, "centroid_distance")
    return float(np.linalg.norm(centroid_mm(a) - centroid_mm(b)))


def mse(a: Volume3D, b: Volume3D) -> float:
    check_same_shape(a.dims, b.dims, "mse")
    diff = np.asarray(a.data, dtype=np.float64) - np.asarray(b.data, dtype=np.float64)
    return float(np.mean(diff ** 2))


def tre(sample: RegistrationSample, ddf: DisplacementField) -> List[float]:
    """Per-landmark ||warp_point(fixed) - moving|| in mm."""
    if not sample.moving_landmarks.matches(sample.fixed_landmarks):
        raise ValueError("moving and fixed landmark labels differ")
    if ddf.dims != sample.dims:
        raise ShapeMismatchError(f"field dims {ddf.dims} differ from sample dims {sample.dims}")
    if len(sample.fixed_landmarks) == 0:
        return []
    mapped = warp_points(sample.fixed_landmarks.points, ddf)
    return np.linalg.norm(mapped - np.asarray(sample.moving_landmarks.points), axis=1).tolist()


def neg_jacobian_fraction(ddf: DisplacementField) -> float:
    """Fraction of interior voxels with det(I + ∇u) <= 0."""
    return float(interior(folding_mask(ddf)).mean())
