from transform.ddf import DisplacementField

from .checkpoint import load_checkpoint, load_seg_checkpoint, save_checkpoint, save_seg_checkpoint
from .config import NetworkConfig, SegNetworkConfig, full_network_config, normalize_quantizers
from .model import RegModel, RegOutput, register_sample, sample_tensors, volume_tensor
from .seg_model import SegModel, seg_forward

__all__ = [
    "DisplacementField",
    "load_checkpoint", "load_seg_checkpoint", "save_checkpoint", "save_seg_checkpoint",
    "NetworkConfig", "SegNetworkConfig", "full_network_config", "normalize_quantizers",
    "RegModel", "RegOutput", "register_sample", "sample_tensors", "volume_tensor",
    "SegModel", "seg_forward",
]
