import os
import random

import numpy as np
import torch
from dotenv import load_dotenv
from loguru import logger

DETERMINISTIC_ENV = "VQREG_DETERMINISTIC"


def deterministic_requested() -> bool:
    load_dotenv()
    return os.getenv(DETERMINISTIC_ENV, "0").strip() in ("1", "true", "yes")


def seed_everything(seed: int, deterministic: bool = False):
    """Seed python / numpy / torch; in deterministic mode also pin torch kernels."""
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)

    if deterministic or deterministic_requested():
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)
        os.environ.setdefault("CUBLAS_WORKSPACE_CONFIG", ":4096:8")
        if torch.backends.cudnn.is_available():
            torch.backends.cudnn.benchmark = False
            torch.backends.cudnn.deterministic = True
        logger.debug(f"deterministic mode enabled, seed={seed}")
        return True
    return False
