from .codebook import Codebook, CodebookName, InitKind, load_codebook, save_codebook
from .kmeans import KMeansResult, kmeans, run_kmeans, subsample
from .quantizer import (DEFAULT_BETA, FeatureMap, IdentityQuantizer, QuantResult, VectorQuantizer, quant_loss,
                        quantize, straight_through, straight_through_backward, usage_perplexity)

__all__ = [
    "Codebook", "CodebookName", "InitKind", "load_codebook", "save_codebook",
    "KMeansResult", "kmeans", "run_kmeans", "subsample",
    "DEFAULT_BETA", "FeatureMap", "IdentityQuantizer", "QuantResult", "VectorQuantizer", "quant_loss",
    "quantize", "straight_through", "straight_through_backward", "usage_perplexity",
]
