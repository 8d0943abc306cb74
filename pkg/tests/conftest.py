import numpy as np
import pytest

from fadnet.network import NetworkConfig
from fadnet.stereo_ops import CorrelationConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """Smallest legal network: quick enough for per-test forward/backward passes."""
    return NetworkConfig(
        base_channels=2,
        max_channels=4,
        corr=CorrelationConfig(max_range=2),
    )
