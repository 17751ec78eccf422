"""Shared fixtures. Session-scoped where construction is slow."""

import numpy as np
import pytest

import dffalign as da
from dffalign import segmentation


@pytest.fixture(scope="session")
def model():
    # frozen desk-scale model used across the suite
    return da.generate_synthetic_model(42)


@pytest.fixture(scope="session")
def small_dataset(model):
    return da.generate_dataset(model, 12, seed=21)


@pytest.fixture(scope="session")
def seg_bank(model):
    return segmentation.generate_segmentation_bank(model.mean_mesh(), 4, 32, seed=5)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
