"""Two-part volume container: UTF-8 ``key=value`` header, blank line, raw little-endian payload.

The same container carries images, masks, displacement fields (``channels=3``) and
codebooks (``order=row-major``), so every artifact of a run can be read back bit-exactly.
"""
import json
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
from loguru import logger
from numpy.typing import NDArray

from utils.errors import VolumeFormatError

from .types import LandmarkSet, MaskKind, MaskVolume, RegistrationSample, Volume3D

FORMAT_TAG = "vqreg-volume/1"

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_ORDERS = {"x-fastest": "F", "row-major": "C"}


def dtype_tag(array: NDArray) -> str:
    return "f32" if np.asarray(array).dtype == np.float32 else "f64"


def _format_value(value) -> str:
    if isinstance(value, (tuple, list, np.ndarray)):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, (float, np.floating)):
        # repr 保证 float 往返精确
        return repr(float(value))
    return str(value)


def write_container(path, header: Dict[str, object], payload: NDArray, *, order: str = "x-fastest"):
    """Write ``payload`` under ``header``; ``dtype`` and ``order`` keys are filled in here."""
    if order not in _ORDERS:
        raise VolumeFormatError(f"unknown order {order}")
    tag = str(header.get("dtype") or dtype_tag(payload))
    if tag not in _DTYPES:
        raise VolumeFormatError(f"unsupported dtype {tag}")

    lines = [f"format={FORMAT_TAG}"]
    for key, value in header.items():
        if key in ("dtype", "order", "format"):
            continue
        lines.append(f"{key}={_format_value(value)}")
    lines.append(f"dtype={tag}")
    lines.append(f"order={order}")

    data = np.asarray(payload).astype(_DTYPES[tag], copy=False)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(("\n".join(lines) + "\n\n").encode("utf-8"))
        f.write(data.tobytes(order=_ORDERS[order]))


def read_container(path) -> Tuple[Dict[str, str], bytes]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"volume file not found: {path}")
    raw = path.read_bytes()
    sep = raw.find(b"\n\n")
    if sep < 0:
        raise VolumeFormatError(f"{path}: header is not terminated by a blank line")
    try:
        text = raw[:sep].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise VolumeFormatError(f"{path}: header is not UTF-8") from exc

    header: Dict[str, str] = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        if "=" not in line:
            raise VolumeFormatError(f"{path}: malformed header line '{line}'")
        key, value = line.split("=", 1)
        header[key.strip()] = value.strip()

    for key in ("dtype", "order"):
        if key not in header:
            raise VolumeFormatError(f"{path}: header is missing '{key}'")
    if header["dtype"] not in _DTYPES:
        raise VolumeFormatError(f"{path}: unsupported dtype {header['dtype']}")
    if header["order"] not in _ORDERS:
        raise VolumeFormatError(f"{path}: unsupported order {header['order']}")
    return header, raw[sep + 2:]


def decode_payload(header: Dict[str, str], payload: bytes, shape: Tuple[int, ...], path="<memory>") -> NDArray:
    dtype = _DTYPES[header["dtype"]]
    expected = int(np.prod(shape)) * dtype.itemsize
    if len(payload) != expected:
        raise VolumeFormatError(
            f"{path}: payload has {len(payload)} bytes, header {shape} requires {expected}")
    flat = np.frombuffer(payload, dtype=dtype)
    return flat.reshape(shape, order=_ORDERS[header["order"]]).astype(dtype.newbyteorder("="))


def parse_ints(value: str, n: Optional[int] = None, key: str = "") -> Tuple[int, ...]:
    try:
        items = tuple(int(v) for v in value.split(","))
    except ValueError as exc:
        raise VolumeFormatError(f"header field {key}='{value}' is not an integer list") from exc
    if n is not None and len(items) != n:
        raise VolumeFormatError(f"header field {key} must have {n} entries, got {len(items)}")
    return items


def parse_floats(value: str, n: Optional[int] = None, key: str = "") -> Tuple[float, ...]:
    try:
        items = tuple(float(v) for v in value.split(","))
    except ValueError as exc:
        raise VolumeFormatError(f"header field {key}='{value}' is not a float list") from exc
    if n is not None and len(items) != n:
        raise VolumeFormatError(f"header field {key} must have {n} entries, got {len(items)}")
    return items


def read_grid(path) -> Tuple[Dict[str, str], NDArray, Tuple[float, ...], Tuple[float, ...]]:
    """Read a gridded container; returns (header, array, spacing, origin). Multi-channel arrays come back as (C, X, Y, Z)."""
    header, payload = read_container(path)
    if "dims" not in header:
        raise VolumeFormatError(f"{path}: header is missing 'dims'")
    dims = parse_ints(header["dims"], 3, "dims")
    if min(dims) < 1:
        raise VolumeFormatError(f"{path}: dims must be >= 1, got {dims}")
    channels = parse_ints(header.get("channels", "1"), 1, "channels")[0]
    spacing = parse_floats(header.get("spacing", "1,1,1"), 3, "spacing")
    origin = parse_floats(header.get("origin", "0,0,0"), 3, "origin")

    if channels == 1:
        data = decode_payload(header, payload, dims, path)
    else:
        per_channel = len(payload) // channels if channels > 0 else 0
        if per_channel * channels != len(payload):
            raise VolumeFormatError(f"{path}: payload is not divisible into {channels} channels")
        data = np.stack([
            decode_payload(header, payload[c * per_channel:(c + 1) * per_channel], dims, path)
            for c in range(channels)
        ])
    return header, data, spacing, origin


def write_grid(path, data: NDArray, spacing, origin, *, kind: str, dtype: Optional[str] = None, **extra):
    data = np.asarray(data)
    if data.ndim == 3:
        channels, dims, payload = 1, data.shape, data
    elif data.ndim == 4:
        # 每个通道各自 x-fastest，通道依次排列
        channels, dims = data.shape[0], data.shape[1:]
        payload = np.concatenate([np.asarray(c).ravel(order="F") for c in data])
    else:
        raise VolumeFormatError(f"cannot store array of shape {data.shape}")
    header = {"kind": kind, "dims": dims, "channels": channels, "spacing": spacing, "origin": origin}
    header.update(extra)
    header["dtype"] = dtype or dtype_tag(data)
    write_container(path, header, payload, order="x-fastest")


def save_volume(path, volume: Volume3D, dtype: Optional[str] = None):
    write_grid(path, volume.data, volume.spacing, volume.origin, kind="image", dtype=dtype)


def load_volume(path) -> Volume3D:
    """Load a volume from the container format, or from NIfTI-1 when nibabel is installed."""
    suffixes = "".join(Path(path).suffixes)
    if suffixes.endswith(".nii") or suffixes.endswith(".nii.gz"):
        return _load_nifti(path)
    header, data, spacing, origin = read_grid(path)
    if data.ndim != 3:
        raise VolumeFormatError(f"{path}: expected a single-channel volume, got {data.shape[0]} channels")
    return Volume3D(data, spacing, origin)


def _load_nifti(path) -> Volume3D:
    try:
        import nibabel as nib
    except ImportError as exc:
        raise VolumeFormatError(f"reading {path} requires nibabel") from exc
    if not Path(path).exists():
        raise FileNotFoundError(f"volume file not found: {path}")
    img = nib.load(str(path))
    data = np.asarray(img.get_fdata(dtype=np.float64))
    if data.ndim == 4 and data.shape[3] == 1:
        data = data[..., 0]
    if data.ndim != 3:
        raise VolumeFormatError(f"{path}: expected a 3D NIfTI volume, got shape {data.shape}")
    spacing = tuple(float(s) for s in img.header.get_zooms()[:3])
    origin = tuple(float(v) for v in img.affine[:3, 3])
    logger.debug(f"loaded NIfTI {path} dims={data.shape} spacing={spacing}")
    return Volume3D(data, spacing, origin)


def save_mask(path, mask: MaskVolume, dtype: Optional[str] = None):
    write_grid(path, mask.data, mask.spacing, mask.origin, kind=f"mask-{mask.kind.value}", dtype=dtype)


def load_mask(path) -> MaskVolume:
    header, data, spacing, origin = read_grid(path)
    kind = header.get("kind", "mask-binary")
    mask_kind = MaskKind.Soft if kind == "mask-soft" else MaskKind.Binary
    return MaskVolume(data, spacing, origin, mask_kind)


def save_landmarks(path, landmarks: LandmarkSet):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for label, (x, y, z) in zip(landmarks.labels, landmarks.points):
            f.write(f"{label}, {float(x)!r}, {float(y)!r}, {float(z)!r}\n")


def load_landmarks(path) -> LandmarkSet:
    labels, points = [], []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 4:
                raise VolumeFormatError(f"{path}:{lineno}: expected 'label, x_mm, y_mm, z_mm'")
            try:
                points.append([float(p) for p in parts[1:]])
            except ValueError as exc:
                raise VolumeFormatError(f"{path}:{lineno}: non-numeric coordinate") from exc
            labels.append(parts[0])
    return LandmarkSet(np.asarray(points, dtype=np.float64).reshape(-1, 3), labels)


SAMPLE_FILES = {
    "moving": "moving.vol",
    "fixed": "fixed.vol",
    "moving_mask": "moving_mask.vol",
    "fixed_mask": "fixed_mask.vol",
    "moving_landmarks": "moving_landmarks.txt",
    "fixed_landmarks": "fixed_landmarks.txt",
}


def save_sample(directory, sample: RegistrationSample, meta: Optional[dict] = None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_volume(directory / SAMPLE_FILES["moving"], sample.moving)
    save_volume(directory / SAMPLE_FILES["fixed"], sample.fixed)
    save_mask(directory / SAMPLE_FILES["moving_mask"], sample.moving_mask)
    save_mask(directory / SAMPLE_FILES["fixed_mask"], sample.fixed_mask)
    save_landmarks(directory / SAMPLE_FILES["moving_landmarks"], sample.moving_landmarks)
    save_landmarks(directory / SAMPLE_FILES["fixed_landmarks"], sample.fixed_landmarks)
    info = {"subject_id": sample.subject_id}
    info.update(meta or {})
    json.dump(info, open(directory / "meta.json", "w"), ensure_ascii=True, indent=2)


def load_sample(directory) -> RegistrationSample:
    directory = Path(directory)
    meta_path = directory / "meta.json"
    subject_id = json.load(open(meta_path))["subject_id"] if meta_path.exists() else directory.name
    return RegistrationSample(
        moving=load_volume(directory / SAMPLE_FILES["moving"]),
        fixed=load_volume(directory / SAMPLE_FILES["fixed"]),
        moving_mask=load_mask(directory / SAMPLE_FILES["moving_mask"]),
        fixed_mask=load_mask(directory / SAMPLE_FILES["fixed_mask"]),
        moving_landmarks=load_landmarks(directory / SAMPLE_FILES["moving_landmarks"]),
        fixed_landmarks=load_landmarks(directory / SAMPLE_FILES["fixed_landmarks"]),
        subject_id=str(subject_id),
    )


def load_dataset(root) -> list[RegistrationSample]:
    root = Path(root)
    dirs = sorted(p for p in root.iterdir() if p.is_dir() and (p / SAMPLE_FILES["fixed"]).exists())
    if not dirs:
        raise FileNotFoundError(f"no samples found under {root}")
    return [load_sample(d) for d in dirs]
