"""Shared fixtures: one tiny trained model reused across the suite.

Training even a toy network dominates test time, so it happens once per
session; tests that need weights on disk save the same model.
"""

from __future__ import annotations

import pytest

from densdiff.model import BackendConfig, save_model
from densdiff.train import train

TINY_CONFIG = BackendConfig(base_channels=16, timesteps=100)


@pytest.fixture(scope="session")
def tiny_model():
    return train(config=TINY_CONFIG, epochs=2, steps_per_epoch=8, batch=4, size=32, seed=1)


@pytest.fixture(scope="session")
def weights_file(tiny_model, tmp_path_factory):
    path = tmp_path_factory.mktemp("weights") / "tiny.pt"
    save_model(tiny_model, str(path))
    return str(path)
