from dataclasses import dataclass
from typing import Tuple

import numpy as np
from numpy.typing import NDArray

from utils.errors import NonFiniteError, ShapeMismatchError, VolumeFormatError
from volume_core.types import Vec3, as_vec3, frozen_array
from volume_core.volume_io import read_grid, write_grid

CHANNEL_ORDER = ("ux", "uy", "uz")


@dataclass(frozen=True)
class DisplacementField:
    """Per-voxel displacement in voxel units on the fixed grid, shape (3, X, Y, Z).

    ``fixed[p]`` corresponds to ``moving[p + u(p)]``.
    """
    data: NDArray[np.floating]
    spacing: Vec3 = (1.0, 1.0, 1.0)
    origin: Vec3 = (0.0, 0.0, 0.0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 4 or data.shape[0] != 3:
            raise ShapeMismatchError(f"displacement field must have shape (3, X, Y, Z), got {data.shape}")
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        if not np.all(np.isfinite(data)):
            raise NonFiniteError("displacement field contains non-finite values")
        object.__setattr__(self, "data", frozen_array(data))
        object.__setattr__(self, "spacing", as_vec3(self.spacing, "spacing"))
        object.__setattr__(self, "origin", as_vec3(self.origin, "origin"))

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(self.data.shape[1:])  # type: ignore[return-value]

    @classmethod
    def zeros(cls, dims, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0), dtype=np.float64) -> "DisplacementField":
        return cls(np.zeros((3, *dims), dtype=dtype), spacing, origin)

    @classmethod
    def constant(cls, dims, shift, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)) -> "DisplacementField":
        data = np.zeros((3, *dims), dtype=np.float64)
        for axis in range(3):
            data[axis] = shift[axis]
        return cls(data, spacing, origin)

    def magnitude_mm(self) -> NDArray[np.float64]:
        scaled = self.data * np.asarray(self.spacing).reshape(3, 1, 1, 1)
        return np.sqrt((scaled ** 2).sum(axis=0))


def save_ddf(path, ddf: DisplacementField, dtype=None):
    write_grid(path, ddf.data, ddf.spacing, ddf.origin, kind="ddf", dtype=dtype,
               units="voxel", channel_order=CHANNEL_ORDER)


def load_ddf(path) -> DisplacementField:
    header, data, spacing, origin = read_grid(path)
    if data.ndim != 4 or data.shape[0] != 3:
        raise VolumeFormatError(f"{path}: a displacement field needs 3 channels")
    order = tuple(header.get("channel_order", ",".join(CHANNEL_ORDER)).split(","))
    if sorted(order) != sorted(CHANNEL_ORDER):
        raise VolumeFormatError(f"{path}: unknown channel_order {order}")
    data = np.stack([data[order.index(c)] for c in CHANNEL_ORDER])
    return DisplacementField(data, spacing, origin)
