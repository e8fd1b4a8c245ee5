"""Deterministic synthetic stand-in for longitudinal gland MR pairs.

A sample is a textured ellipsoidal "gland" with a few bright / dark blobs
(cyst and calcification analogues) on a flat background. The fixed image is
the moving image warped by a smooth sum of Gaussian-bump displacements, so the
generator's own field is an exact oracle for registration metrics.
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from loguru import logger
from numpy.typing import NDArray
from scipy import ndimage

from transform.ddf import DisplacementField
from transform.resample import MaskMode, ResampleSpec, resample

from .types import LandmarkSet, MaskKind, MaskVolume, RegistrationSample, Volume3D

MIN_DIM = 16
BORDER_MARGIN = 2

BACKGROUND = 0.2
GLAND_BASE = 0.6
BRIGHT_BLOB = 0.9
DARK_BLOB = 0.05
NOISE_SIGMA = 0.02

MIN_BLOBS = 3
BLOB_GAP = 3.0
BLOB_ATTEMPTS = 20


@dataclass(frozen=True)
class GaussianBumpField:
    """u(p) = Σ_k a_k · exp(-|p - c_k|² / 2σ_k²), all quantities in voxel units."""
    centers: NDArray[np.float64]
    sigmas: NDArray[np.float64]
    amplitudes: NDArray[np.float64]

    def evaluate(self, points: NDArray) -> NDArray[np.float64]:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        out = np.zeros_like(points)
        for center, sigma, amp in zip(self.centers, self.sigmas, self.amplitudes):
            d2 = ((points - center) ** 2).sum(axis=1)
            out += np.exp(-d2 / (2 * sigma ** 2))[:, None] * amp
        return out

    def sample(self, dims) -> NDArray[np.float64]:
        grid = np.stack(np.meshgrid(*[np.arange(n, dtype=np.float64) for n in dims], indexing="ij"), axis=-1)
        return self.evaluate(grid.reshape(-1, 3)).T.reshape(3, *dims)

    def scaled(self, factor: float) -> "GaussianBumpField":
        return GaussianBumpField(self.centers, self.sigmas, self.amplitudes * factor)


@dataclass(frozen=True)
class SynthResult:
    sample: RegistrationSample
    ground_truth: DisplacementField
    field: GaussianBumpField


def _ellipsoid(dims, center, radii) -> NDArray[np.float32]:
    grid = np.meshgrid(*[np.arange(n, dtype=np.float64) for n in dims], indexing="ij")
    r2 = sum(((g - c) / r) ** 2 for g, c, r in zip(grid, center, radii))
    return (r2 <= 1.0).astype(np.float32)


def _texture(rng: np.random.Generator, dims) -> NDArray[np.float64]:
    grid = np.meshgrid(*[np.arange(n, dtype=np.float64) for n in dims], indexing="ij")
    texture = np.zeros(dims)
    for _ in range(3):
        freq = rng.uniform(0.05, 0.15, size=3)
        phase = rng.uniform(0, 2 * np.pi, size=3)
        term = np.ones(dims)
        for g, f, p in zip(grid, freq, phase):
            term = term * np.sin(2 * np.pi * f * g + p)
        texture += term
    return 0.1 * texture / 3.0


def _bump_field(rng: np.random.Generator, dims, center, radii, amplitude_mm: float, spacing) -> GaussianBumpField:
    n_bumps = int(rng.integers(3, 7))
    centers = center + rng.uniform(-1.0, 1.0, size=(n_bumps, 3)) * np.asarray(radii)
    sigmas = rng.uniform(4.0, 8.0, size=n_bumps)
    directions = rng.normal(size=(n_bumps, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    magnitudes = rng.uniform(0.5, 1.0, size=(n_bumps, 1))
    # 先在 mm 空间生成，再换算成体素单位
    amplitudes = directions * magnitudes / np.asarray(spacing)
    field = GaussianBumpField(centers, sigmas, amplitudes)

    sampled_mm = field.sample(dims) * np.asarray(spacing).reshape(3, 1, 1, 1)
    peak = float(np.sqrt((sampled_mm ** 2).sum(axis=0)).max())
    if amplitude_mm <= 0 or peak <= 0:
        return field.scaled(0.0)
    return field.scaled(amplitude_mm / peak)


def _blob_centers(rng: np.random.Generator, center, radii, n_blobs: int) -> NDArray[np.float64]:
    radii = np.asarray(radii, dtype=np.float64)
    # 间距随腺体大小缩放，16³ 时仍能放下 3 个点
    min_gap = min(BLOB_GAP, 0.6 * float(radii.min()))
    best: List[NDArray] = []
    for _ in range(BLOB_ATTEMPTS):
        chosen: List[NDArray] = []
        for _ in range(1000 * n_blobs):
            if len(chosen) == n_blobs:
                break
            offset = rng.uniform(-1.0, 1.0, size=3)
            if (offset ** 2).sum() > 1.0:
                continue
            candidate = center + 0.5 * offset * radii
            if all(np.linalg.norm(candidate - c) >= min_gap for c in chosen):
                chosen.append(candidate)
        if len(chosen) > len(best):
            best = chosen
        if len(best) >= MIN_BLOBS:
            break
    if len(best) < MIN_BLOBS:
        raise ValueError("gland too small to hold the landmark blobs")
    return np.asarray(best)


def _check_mask(mask: NDArray, name: str):
    fraction = float(mask.mean())
    if not 0.05 <= fraction <= 0.5:
        raise ValueError(f"{name} occupies {fraction:.3f} of the volume, outside [0.05, 0.5]")
    m = BORDER_MARGIN
    inner = np.zeros_like(mask, dtype=bool)
    inner[m:-m, m:-m, m:-m] = True
    if mask[~inner].any():
        raise ValueError(f"{name} comes within {m} voxels of the volume boundary; dims too small to contain the gland")
    _, n_components = ndimage.label(mask > 0)
    if n_components != 1:
        raise ValueError(f"{name} has {n_components} connected components")


def synth_sample_with_truth(seed: int, dims: Sequence[int] = (32, 32, 24), deform_amplitude: float = 2.0, *,
                            spacing: Sequence[float] = (0.7, 0.7, 0.7),
                            noise_sigma: float = NOISE_SIGMA,
                            subject_id: Optional[str] = None) -> SynthResult:
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < MIN_DIM:
        raise ValueError(f"synthetic dims must be >= {MIN_DIM} per axis, got {dims}")
    if deform_amplitude < 0:
        raise ValueError(f"deform_amplitude must be >= 0, got {deform_amplitude}")
    spacing = tuple(float(s) for s in spacing)
    rng = np.random.default_rng(seed)

    dims_arr = np.asarray(dims, dtype=np.float64)
    center = (dims_arr - 1) / 2 + rng.uniform(-0.5, 0.5, size=3)
    radii = 0.25 * dims_arr * rng.uniform(0.97, 1.03, size=3)
    field = _bump_field(rng, dims, center, radii, deform_amplitude, spacing)
    ground_truth = DisplacementField(field.sample(dims), spacing)

    # landmarks 在 fixed 空间采样，经解析形变映射到 moving 空间
    n_blobs = int(rng.integers(3, 9))
    fixed_points = _blob_centers(rng, center, radii, n_blobs)
    moving_points = fixed_points + field.evaluate(fixed_points)

    moving_mask = _ellipsoid(dims, center, radii)
    image = np.full(dims, BACKGROUND, dtype=np.float64)
    image = np.where(moving_mask > 0, GLAND_BASE + _texture(rng, dims), image)
    grid = np.stack(np.meshgrid(*[np.arange(n, dtype=np.float64) for n in dims], indexing="ij"), axis=-1)
    for point in moving_points:
        radius = rng.uniform(1.2, 2.0)
        value = BRIGHT_BLOB if rng.uniform() < 0.5 else DARK_BLOB
        weight = np.exp(-((grid - point) ** 2).sum(axis=-1) / (2 * radius ** 2))
        image = image * (1 - weight) + value * weight
    clean = np.clip(image, 0.0, 1.0).astype(np.float32)

    moving_vol = Volume3D(clean, spacing)
    moving_mask_vol = MaskVolume(moving_mask, spacing, kind=MaskKind.Binary)
    fixed_clean = resample(moving_vol, ground_truth)
    fixed_mask_vol = resample(moving_mask_vol, ground_truth, ResampleSpec(mask_mode=MaskMode.Threshold))
    _check_mask(moving_mask_vol.data, "moving mask")
    _check_mask(fixed_mask_vol.data, "fixed mask")

    moving_data, fixed_data = clean, fixed_clean.data
    if noise_sigma > 0:
        moving_data = np.clip(moving_data + rng.normal(0, noise_sigma, dims), 0, 1).astype(np.float32)
        fixed_data = np.clip(fixed_data + rng.normal(0, noise_sigma, dims), 0, 1).astype(np.float32)

    labels = [f"L{i + 1}" for i in range(len(fixed_points))]
    sample = RegistrationSample(
        moving=Volume3D(moving_data, spacing),
        fixed=Volume3D(fixed_data, spacing),
        moving_mask=moving_mask_vol,
        fixed_mask=fixed_mask_vol,
        moving_landmarks=LandmarkSet(moving_points * np.asarray(spacing), labels),
        fixed_landmarks=LandmarkSet(fixed_points * np.asarray(spacing), labels),
        subject_id=subject_id if subject_id is not None else f"synth-{seed}",
    )
    return SynthResult(sample, ground_truth, field)


def synth_sample(seed: int, dims: Sequence[int] = (32, 32, 24), deform_amplitude: float = 2.0, **kwargs) -> RegistrationSample:
    return synth_sample_with_truth(seed, dims, deform_amplitude, **kwargs).sample


def synth_dataset(n_pairs: int, dims: Sequence[int], deform_amplitude: float, *, seed: int = 0,
                  spacing: Sequence[float] = (0.7, 0.7, 0.7), noise_sigma: float = NOISE_SIGMA) -> List[SynthResult]:
    """One subject per seed ``seed + i``; results keep the ground-truth field for oracle metrics."""
    results = []
    for i in range(n_pairs):
        results.append(synth_sample_with_truth(seed + i, dims, deform_amplitude, spacing=spacing,
                                               noise_sigma=noise_sigma, subject_id=f"synth-{seed + i:05d}"))
    logger.debug(f"synthesized {n_pairs} pairs dims={tuple(dims)} amplitude={deform_amplitude}mm")
    return results

