import numpy as np
from numpy.typing import NDArray

from utils.errors import ShapeMismatchError

from .ddf import DisplacementField


def jacobian_determinants(ddf: DisplacementField) -> NDArray[np.float64]:
    """det(I + ∇u) per voxel; central differences inside, one-sided at the borders."""
    if min(ddf.dims) < 3:
        raise ShapeMismatchError(f"jacobian needs at least 3 voxels per axis, got {ddf.dims}")
    u = np.asarray(ddf.data, dtype=np.float64)
    # grad[i][j] = ∂u_i/∂x_j
    grad = [np.gradient(u[i], axis=(0, 1, 2), edge_order=1) for i in range(3)]
    a = [[grad[i][j] + (1.0 if i == j else 0.0) for j in range(3)] for i in range(3)]
    return (a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
            - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]))


def interior(array: NDArray) -> NDArray:
    return array[1:-1, 1:-1, 1:-1]


def folding_mask(ddf: DisplacementField) -> NDArray[np.bool_]:
    return jacobian_determinants(ddf) <= 0
