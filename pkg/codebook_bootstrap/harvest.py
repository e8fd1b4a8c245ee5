"""Bottleneck-feature harvesting and K-means initialization of the collaborative codebook."""
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from loguru import logger
from numpy.typing import NDArray

from regnet.seg_model import SegModel, seg_forward
from utils.errors import ShapeMismatchError
from volume_core.types import Volume3D
from vq_core.codebook import Codebook, CodebookName, InitKind
from vq_core.kmeans import assign, run_kmeans, subsample


def harvest_features(seg_model: SegModel, images: Sequence[Volume3D], cap: Optional[int] = None, seed: int = 0,
                     expected_channels: Optional[int] = None) -> NDArray[np.float64]:
    """Every bottleneck position of every image as one row, subsampled to at most ``cap`` rows."""
    if len(images) == 0:
        raise ValueError("cannot harvest features from an empty dataset")
    blocks = []
    for image in images:
        _, fmap = seg_forward(seg_model, image)
        if expected_channels is not None and fmap.C != expected_channels:
            raise ShapeMismatchError(f"bottleneck has {fmap.C} channels, the collaborative codebook expects "
                                     f"{expected_channels}")
        blocks.append(fmap.flat().double().numpy())
    features = np.concatenate(blocks)
    if cap is not None and len(features) > cap:
        logger.info(f"subsampling {len(features)} harvested vectors to {cap}")
        features = subsample(features, cap, seed)
    return features


def init_collaborative(features: NDArray, K_c: int, seed: int = 0, max_iters: int = 100) -> Codebook:
    features = np.asarray(features, dtype=np.float64)
    if len(features) < K_c:
        raise ValueError(f"need at least K_c={K_c} feature vectors, got {len(features)}")
    result = run_kmeans(features, K_c, seed=seed, max_iters=max_iters)
    return Codebook(result.centers, InitKind.KMeans, CodebookName.Collaborative)


def quantization_error(features: NDArray, codebook: Codebook) -> float:
    """Mean squared distance of each feature to its nearest code."""
    _, dist = assign(np.asarray(features, dtype=np.float64), np.asarray(codebook.codes))
    return float(dist.mean())


def compare_initializations(train_features: NDArray, heldout_features: NDArray, K_c: int,
                            seeds: Sequence[int] = (0, 1, 2)) -> pd.DataFrame:
    """Held-out quantization error of K-means vs. random codebooks of equal size, one row per seed."""
    rows = []
    C = train_features.shape[1]
    for seed in seeds:
        learned = init_collaborative(train_features, K_c, seed)
        random = Codebook.random(K_c, C, seed=seed, name=CodebookName.Collaborative)
        rows.append({"seed": seed, "kmeans": quantization_error(heldout_features, learned),
                     "random": quantization_error(heldout_features, random)})
    frame = pd.DataFrame(rows)
    logger.info(f"held-out quantization error kmeans={frame['kmeans'].mean():.6g} random={frame['random'].mean():.6g}")
    return frame

