from dataclasses import dataclass, field
from enum import Enum
from typing import List, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray

from utils.errors import NonFiniteError, ShapeMismatchError

Vec3 = Tuple[float, float, float]


def as_vec3(value: Sequence[float], name: str) -> Vec3:
    vec = tuple(float(v) for v in value)
    if len(vec) != 3:
        raise ValueError(f"{name} must have 3 components, got {len(vec)}")
    return vec  # type: ignore[return-value]


def frozen_array(data: NDArray) -> NDArray:
    data = np.array(data, copy=True)
    data.setflags(write=False)
    return data


@dataclass(frozen=True)
class Volume3D:
    """3D 标量网格，索引顺序为 (x, y, z)，spacing/origin 单位为 mm。"""
    data: NDArray[np.floating]
    spacing: Vec3 = (1.0, 1.0, 1.0)
    origin: Vec3 = (0.0, 0.0, 0.0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ShapeMismatchError(f"Volume3D expects a 3D array, got shape {data.shape}")
        if min(data.shape) < 1:
            raise ShapeMismatchError(f"Volume3D dims must be >= 1, got {data.shape}")
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        spacing = as_vec3(self.spacing, "spacing")
        if any(s <= 0 for s in spacing):
            raise ValueError(f"spacing components must be > 0, got {spacing}")
        object.__setattr__(self, "data", frozen_array(data))
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", as_vec3(self.origin, "origin"))

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(self.data.shape)  # type: ignore[return-value]

    def same_grid(self, other: "Volume3D") -> bool:
        return self.dims == other.dims and np.allclose(self.spacing, other.spacing)

    def with_data(self, data: NDArray) -> "Volume3D":
        return Volume3D(data, self.spacing, self.origin)

    def normalized(self) -> "Volume3D":
        """Min-max normalisation to [0, 1]; constant volumes map to 0."""
        lo, hi = float(self.data.min()), float(self.data.max())
        if hi - lo <= 0:
            return self.with_data(np.zeros_like(self.data))
        return self.with_data((self.data - lo) / (hi - lo))

    def voxel_to_mm(self, voxel: NDArray) -> NDArray:
        return np.asarray(self.origin) + np.asarray(voxel, dtype=np.float64) * np.asarray(self.spacing)

    def mm_to_voxel(self, point: NDArray) -> NDArray:
        return (np.asarray(point, dtype=np.float64) - np.asarray(self.origin)) / np.asarray(self.spacing)


class MaskKind(str, Enum):
    Binary = "binary"
    Soft = "soft"


@dataclass(frozen=True)
class MaskVolume(Volume3D):
    kind: MaskKind = MaskKind.Binary

    def __post_init__(self):
        super().__post_init__()
        kind = MaskKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError("mask contains non-finite values")
        if kind is MaskKind.Binary:
            if not np.all((self.data == 0) | (self.data == 1)):
                raise ValueError("binary mask values must be 0 or 1")
        elif self.data.min() < 0 or self.data.max() > 1:
            raise ValueError("soft mask values must lie in [0, 1]")

    def with_data(self, data: NDArray, kind: "MaskKind | None" = None) -> "MaskVolume":
        return MaskVolume(data, self.spacing, self.origin, kind or self.kind)

    def thresholded(self, level: float = 0.5) -> "MaskVolume":
        return MaskVolume((self.data >= level).astype(self.data.dtype), self.spacing, self.origin, MaskKind.Binary)

    @property
    def voxel_count(self) -> float:
        return float(self.data.sum())


@dataclass(frozen=True)
class LandmarkSet:
    points: NDArray[np.float64]
    labels: List[str] = field(default_factory=list)

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        labels = [str(label) for label in self.labels] if self.labels else [str(i) for i in range(len(points))]
        if len(labels) != len(points):
            raise ShapeMismatchError(f"{len(points)} landmarks but {len(labels)} labels")
        object.__setattr__(self, "points", frozen_array(points))
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.labels)

    def matches(self, other: "LandmarkSet") -> bool:
        return self.labels == other.labels


@dataclass(frozen=True)
class RegistrationSample:
    moving: Volume3D
    fixed: Volume3D
    moving_mask: MaskVolume
    fixed_mask: MaskVolume
    moving_landmarks: LandmarkSet
    fixed_landmarks: LandmarkSet
    subject_id: str = "0"

    def __post_init__(self):
        ref = self.fixed
        for name in ("moving", "moving_mask", "fixed_mask"):
            vol = getattr(self, name)
            if not ref.same_grid(vol):
                raise ShapeMismatchError(
                    f"{name} grid {vol.dims}@{vol.spacing} differs from fixed {ref.dims}@{ref.spacing}")
        if not self.moving_landmarks.matches(self.fixed_landmarks):
            raise ShapeMismatchError("moving/fixed landmark labels differ")

    @property
    def dims(self) -> Tuple[int, int, int]:
        return self.fixed.dims

    @property
    def spacing(self) -> Vec3:
        return self.fixed.spacing
