import os

import numpy as np
import pytest
import torch

from regnet.config import NetworkConfig
from volume_core.synth import synth_sample_with_truth


def pytest_collection_modifyitems(config, items):
    if os.getenv("VQREG_RUN_SLOW", "0") == "1":
        return
    skip = pytest.mark.skip(reason="slow experiment, set VQREG_RUN_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def synth7():
    return synth_sample_with_truth(7, (32, 32, 24), 2.0)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def tiny_config():
    """Two-stage network on 8^3 inputs."""
    return NetworkConfig(channels=[2, 4], n_res_blocks=2, convs_per_block=2, dict_sizes=(6, 6, 5),
                         dict_channels=(4, 2, 4), input_dims=(8, 8, 8))


@pytest.fixture
def float64():
    previous = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(previous)
