"""Lloyd's K-means with k-means++ seeding."""
from dataclasses import dataclass, field
from typing import List

import numpy as np
from loguru import logger
from numpy.typing import NDArray
from scipy.spatial.distance import cdist

from utils.errors import NonFiniteError

# 单个距离块的元素上限，控制内存
_CHUNK_ELEMENTS = 1 << 23


@dataclass
class KMeansResult:
    centers: NDArray[np.float64]
    labels: NDArray[np.int64]
    objective_history: List[float] = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False

    @property
    def objective(self) -> float:
        return self.objective_history[-1]


def assign(vectors: NDArray, centers: NDArray) -> tuple[NDArray[np.int64], NDArray[np.float64]]:
    """Nearest center per row (lowest index on ties) and the squared distance to it."""
    n, c = vectors.shape
    k = centers.shape[0]
    step = max(1, _CHUNK_ELEMENTS // max(1, k * c))
    labels = np.empty(n, dtype=np.int64)
    dist = np.empty(n, dtype=np.float64)
    for start in range(0, n, step):
        d2 = cdist(vectors[start:start + step], centers, "sqeuclidean")
        idx = np.argmin(d2, axis=1)
        labels[start:start + step] = idx
        dist[start:start + step] = d2[np.arange(len(d2)), idx]
    return labels, dist


def kmeans_plus_plus(vectors: NDArray, K: int, rng: np.random.Generator) -> NDArray[np.float64]:
    n = vectors.shape[0]
    centers = [vectors[rng.integers(n)]]
    closest = ((vectors - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, K):
        total = closest.sum()
        if total <= 0:
            # 剩余点均与已有中心重合，退化为均匀抽样
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=closest / total)
        centers.append(vectors[idx])
        closest = np.minimum(closest, ((vectors - vectors[idx]) ** 2).sum(axis=1))
    return np.array(centers, dtype=np.float64)


def lloyd(vectors: NDArray, centers: NDArray, max_iters: int) -> KMeansResult:
    centers = np.array(centers, dtype=np.float64)
    history: List[float] = []
    labels, dist = assign(vectors, centers)
    history.append(float(dist.sum()))
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iters + 1):
        for k in range(centers.shape[0]):
            members = vectors[labels == k]
            # 空簇保留原中心
            if len(members) > 0:
                centers[k] = members.mean(axis=0)
        new_labels, dist = assign(vectors, centers)
        history.append(float(dist.sum()))
        converged = bool(np.array_equal(new_labels, labels))
        labels = new_labels
        if converged:
            break
    return KMeansResult(centers, labels, history, n_iter, converged)


def run_kmeans(vectors: NDArray, K: int, seed: int = 0, max_iters: int = 100) -> KMeansResult:
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[0] == 0:
        raise ValueError(f"kmeans needs a non-empty N x C array, got shape {vectors.shape}")
    if vectors.shape[0] < K:
        raise ValueError(f"kmeans needs N >= K, got N={vectors.shape[0]} K={K}")
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    if not np.all(np.isfinite(vectors)):
        raise NonFiniteError("kmeans input contains non-finite values")

    rng = np.random.default_rng(seed)
    result = lloyd(vectors, kmeans_plus_plus(vectors, K, rng), max_iters)
    logger.debug(f"kmeans K={K} N={len(vectors)} iters={result.n_iter} converged={result.converged} objective={result.objective:.6g}")
    return result


def kmeans(vectors: NDArray, K: int, seed: int = 0, max_iters: int = 100) -> NDArray[np.float64]:
    return run_kmeans(vectors, K, seed, max_iters).centers


def subsample(vectors: NDArray, cap: int, seed: int = 0) -> NDArray:
    """Uniform subsample without replacement to at most ``cap`` rows, order preserved."""
    if len(vectors) <= cap:
        return vectors
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(len(vectors), size=cap, replace=False))
    return vectors[keep]
