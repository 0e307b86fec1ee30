"""Shared test fixtures for the E-MIM lab."""

import os

# Powertools config for tests
os.environ.setdefault("POWERTOOLS_SERVICE_NAME", "emim-lab-test")
os.environ.setdefault("POWERTOOLS_LOG_LEVEL", "WARNING")
os.environ.setdefault("POWERTOOLS_DEV", "true")

import numpy as np
import pytest
import torch

from src.core.config import get_settings
from src.models.encoder import EncoderConfig
from src.models.volume import MultiModalVolume, SyntheticDataset, SyntheticDatasetConfig
from src.services.volume import generate_dataset


@pytest.fixture(autouse=True)
def fresh_settings():
    """Settings are cached per process; tests that set EMIM_* env vars need a fresh read."""
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def small_dataset_config():
    """Two modalities, 8³ volumes, 4³ patches (n=8)."""
    return SyntheticDatasetConfig(
        num_samples=6,
        num_modalities=2,
        dims=(8, 8, 8),
        diversity=0.05,
        seed=7,
    )


@pytest.fixture
def small_dataset(small_dataset_config):
    return generate_dataset(small_dataset_config)


@pytest.fixture
def labelled_dataset(small_dataset_config):
    config = small_dataset_config.model_copy(update={"num_samples": 12})
    return SyntheticDataset(volumes=generate_dataset(config), config=config)


@pytest.fixture
def balanced_dataset(labelled_dataset):
    """``labelled_dataset`` relabelled so both probe classes appear six times."""
    volumes = [
        MultiModalVolume(data=v.data, has_lesion=bool(i % 2))
        for i, v in enumerate(labelled_dataset.volumes)
    ]
    return SyntheticDataset(volumes=volumes, config=labelled_dataset.config)


@pytest.fixture
def oracle_dataset():
    """8 volumes, C=2, n=6 positions of 2×2×2 voxels."""
    rng = np.random.default_rng(11)
    return [
        MultiModalVolume(data=rng.uniform(0.0, 1.0, size=(2, 4, 6, 2)).astype(np.float32))
        for _ in range(8)
    ]


@pytest.fixture
def tiny_encoder_config():
    """depth 2, d 4, n 4: the finite-difference suite's model."""
    return EncoderConfig(
        num_modalities=2,
        volume_dims=(4, 4, 2),
        patch_size=(2, 2, 2),
        depth=2,
        embed_dim=4,
        num_heads=2,
        mlp_ratio=2.0,
        pyramid_levels=2,
        seed=3,
    )


@pytest.fixture
def small_encoder_config():
    """Matches ``small_dataset``."""
    return EncoderConfig(
        num_modalities=2,
        volume_dims=(8, 8, 8),
        patch_size=(4, 4, 4),
        depth=2,
        embed_dim=8,
        num_heads=2,
        pyramid_levels=2,
        seed=0,
    )


@pytest.fixture
def tiny_volumes(tiny_encoder_config):
    rng = np.random.default_rng(5)
    shape = (3, tiny_encoder_config.num_modalities, *tiny_encoder_config.volume_dims)
    return torch.from_numpy(rng.uniform(0.1, 0.9, size=shape))
