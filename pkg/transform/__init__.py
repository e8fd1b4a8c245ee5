from .ddf import DisplacementField, load_ddf, save_ddf
from .jacobian import jacobian_determinants
from .resample import MaskMode, ResampleSpec, resample, warp, warp_point, warp_points

__all__ = [
    "DisplacementField", "load_ddf", "save_ddf", "jacobian_determinants",
    "MaskMode", "ResampleSpec", "resample", "warp", "warp_point", "warp_points",
]
