"""Checkpoint archive: named parameters plus the config they were built from.

Loading rebuilds the model from the echoed config and refuses archives whose
format tag or config differs from what the caller expects.
"""
from pathlib import Path
from typing import Optional

import torch
from loguru import logger

from utils.errors import CheckpointMismatchError
from vq_core.codebook import InitKind

from .config import NetworkConfig, SegNetworkConfig
from .model import RegModel
from .seg_model import SegModel

CHECKPOINT_FORMAT = "vqreg-checkpoint/1"
SEG_CHECKPOINT_FORMAT = "vqreg-seg-checkpoint/1"


def save_checkpoint(path, model: RegModel, *, extra: Optional[dict] = None):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "format": CHECKPOINT_FORMAT,
        "network_config": model.config.model_dump(mode="json"),
        "init_kinds": {k: q.init_kind.value for k, q in model.vector_quantizers().items()},
        "state_dict": model.state_dict(),
        "extra": extra or {},
    }, path)
    logger.debug(f"checkpoint written to {path}")


def _read(path, expected_format: str) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    archive = torch.load(path, map_location="cpu", weights_only=True)
    if not isinstance(archive, dict) or archive.get("format") != expected_format:
        found = archive.get("format") if isinstance(archive, dict) else type(archive).__name__
        raise CheckpointMismatchError(f"{path}: format tag {found!r}, expected {expected_format!r}")
    return archive


def load_checkpoint(path, expected: Optional[NetworkConfig] = None) -> RegModel:
    archive = _read(path, CHECKPOINT_FORMAT)
    config = NetworkConfig(**archive["network_config"])
    if expected is not None and expected.model_dump(mode="json") != config.model_dump(mode="json"):
        raise CheckpointMismatchError(f"{path}: network config differs from the requested one")
    model = RegModel(config)
    try:
        model.load_state_dict(archive["state_dict"])
    except RuntimeError as exc:
        raise CheckpointMismatchError(f"{path}: {exc}") from exc
    for name, kind in archive.get("init_kinds", {}).items():
        model.quantizers[name].init_kind = InitKind(kind)
    model.eval()
    return model


def save_seg_checkpoint(path, model: SegModel):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "format": SEG_CHECKPOINT_FORMAT,
        "network_config": model.config.model_dump(mode="json"),
        "state_dict": model.state_dict(),
    }, path)


def load_seg_checkpoint(path) -> SegModel:
    archive = _read(path, SEG_CHECKPOINT_FORMAT)
    model = SegModel(SegNetworkConfig(**archive["network_config"]))
    try:
        model.load_state_dict(archive["state_dict"])
    except RuntimeError as exc:
        raise CheckpointMismatchError(f"{path}: {exc}") from exc
    model.eval()
    return model

