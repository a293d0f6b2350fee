"""Shared fixtures: untrained desk-scale models and synthetic frames."""

import numpy as np
import pytest

from slimvc.codec import SlimVCModel
from slimvc.datasets import SyntheticDataset


@pytest.fixture(scope="session")
def desk_model():
    """Read-only desk model; tests that mutate parameters build their own."""
    return SlimVCModel("desk", seed=0)


@pytest.fixture
def fresh_model():
    return SlimVCModel("desk", seed=1)


@pytest.fixture(scope="session")
def translate_clip():
    """Twelve 48x48 frames of a translating texture."""
    return SyntheticDataset("translate", seed=3).clip(48, 48, length=12)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
