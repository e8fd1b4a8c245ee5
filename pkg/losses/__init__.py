from .objective import LOSS_LOG_COLUMNS, LossComponents, combine_losses, compute_components, total_loss
from .terms import DICE_EPS, bending_energy, dice_loss, ssd_loss
from .weights import LossWeights

__all__ = [
    "LOSS_LOG_COLUMNS", "LossComponents", "combine_losses", "compute_components", "total_loss",
    "DICE_EPS", "bending_energy", "dice_loss", "ssd_loss", "LossWeights",
]
