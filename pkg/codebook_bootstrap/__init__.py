from .config import BootstrapConfig
from .harvest import compare_initializations, harvest_features, init_collaborative, quantization_error
from .seg_train import segmentation_dsc, segmentation_pairs, train_segmentation

__all__ = [
    "BootstrapConfig", "compare_initializations", "harvest_features", "init_collaborative", "quantization_error",
    "segmentation_dsc", "segmentation_pairs", "train_segmentation",
]
