from typing import Sequence

import numpy as np
from loguru import logger

from .types import LandmarkSet, MaskVolume, RegistrationSample, Volume3D


def _crop(volume: Volume3D, start, size):
    sl = tuple(slice(s, s + n) for s, n in zip(start, size))
    origin = np.asarray(volume.origin) + np.asarray(start) * np.asarray(volume.spacing)
    if isinstance(volume, MaskVolume):
        return MaskVolume(volume.data[sl], volume.spacing, tuple(origin), volume.kind)
    return Volume3D(volume.data[sl], volume.spacing, tuple(origin))


def _inside(volume: Volume3D, points) -> np.ndarray:
    voxel = volume.mm_to_voxel(points).reshape(-1, 3)
    return np.all((voxel >= 0) & (voxel <= np.asarray(volume.dims) - 1), axis=1)


def crop_around_mask(sample: RegistrationSample, size: Sequence[int]) -> RegistrationSample:
    """Crop every volume of a pair to ``size`` centred on the fixed-mask centroid.

    The box is shifted to stay inside the volume; origins move with it so landmark
    coordinates (mm) stay valid without rewriting. Landmark pairs with either point
    outside the cropped grid are dropped.
    """
    size = tuple(int(n) for n in size)
    if any(n > d for n, d in zip(size, sample.dims)):
        raise ValueError(f"crop size {size} exceeds volume dims {sample.dims}")
    mask = sample.fixed_mask.data
    if mask.sum() > 0:
        centroid = np.argwhere(mask > 0.5).mean(axis=0)
    else:
        centroid = (np.asarray(sample.dims) - 1) / 2
    start = np.round(centroid - (np.asarray(size) - 1) / 2).astype(int)
    start = np.clip(start, 0, np.asarray(sample.dims) - np.asarray(size))

    moving, fixed = _crop(sample.moving, start, size), _crop(sample.fixed, start, size)
    keep = (_inside(moving, sample.moving_landmarks.points)
            & _inside(fixed, sample.fixed_landmarks.points))
    if not keep.all():
        dropped = [label for label, k in zip(sample.fixed_landmarks.labels, keep) if not k]
        logger.warning(f"{sample.subject_id}: landmarks {dropped} fall outside the crop box and are dropped")

    def kept(landmarks: LandmarkSet) -> LandmarkSet:
        return LandmarkSet(landmarks.points[keep], [label for label, k in zip(landmarks.labels, keep) if k])

    return RegistrationSample(
        moving=moving,
        fixed=fixed,
        moving_mask=_crop(sample.moving_mask, start, size),
        fixed_mask=_crop(sample.fixed_mask, start, size),
        moving_landmarks=kept(sample.moving_landmarks),
        fixed_landmarks=kept(sample.fixed_landmarks),
        subject_id=sample.subject_id,
    )
