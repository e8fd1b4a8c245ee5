from .types import Volume3D, MaskVolume, MaskKind, LandmarkSet, RegistrationSample
from .volume_io import load_volume, save_volume, load_mask, save_mask, load_landmarks, save_landmarks

__all__ = [
    "Volume3D", "MaskVolume", "MaskKind", "LandmarkSet", "RegistrationSample",
    "load_volume", "save_volume", "load_mask", "save_mask", "load_landmarks", "save_landmarks",
]
