from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from loguru import logger
from numpy.typing import NDArray

from codebook_bootstrap.harvest import harvest_features, init_collaborative, quantization_error
from codebook_bootstrap.seg_train import segmentation_dsc, segmentation_pairs, train_segmentation
from regnet.checkpoint import save_seg_checkpoint
from regnet.seg_model import SegModel
from volume_core.types import RegistrationSample
from vq_core.codebook import Codebook, CodebookName, save_codebook

from .config import TrainConfig


@dataclass
class BootstrapResult:
    seg_model: SegModel
    features: NDArray[np.float64]
    codebook: Codebook
    seg_dsc: float


def run_bootstrap(config: TrainConfig, train: Sequence[RegistrationSample], seed: int,
                  output_dir: Optional[str] = None, K_c: Optional[int] = None) -> BootstrapResult:
    """Segmentation training -> feature harvest -> K-means, all on the training split."""
    boot = config.bootstrap.model_copy(update={"seed": seed})
    pairs = segmentation_pairs(train)
    seg_model = train_segmentation(pairs, boot)
    seg_dsc = segmentation_dsc(seg_model, pairs)
    logger.info(f"segmentation network trained, train DSC={seg_dsc:.4f}")

    features = harvest_features(seg_model, [p[0] for p in pairs], cap=boot.feature_cap, seed=seed,
                                expected_channels=config.network.dict_channels[2])
    codebook = init_collaborative(features, K_c or boot.K_c, seed, boot.kmeans_max_iters)
    random = Codebook.random(codebook.K, codebook.C, seed=seed, name=CodebookName.Collaborative)
    logger.info(f"collaborative codebook K={codebook.K}: quantization error kmeans="
                f"{quantization_error(features, codebook):.6g} random={quantization_error(features, random):.6g}")

    if output_dir is not None:
        out = Path(output_dir)
        save_seg_checkpoint(out / "seg.pt", seg_model)
        save_codebook(out / "collaborative.cb", codebook)
        logger.success(f"segmentation checkpoint and collaborative codebook written to {out}")
    return BootstrapResult(seg_model, features, codebook, seg_dsc)
