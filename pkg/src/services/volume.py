"""Synthetic dataset generation and patch partitioning."""

import math

from collections.abc import Sequence

import numpy as np

from src.core.errors import ShapeError
from src.core.observability import logger
from src.core.parallel import ordered_map
from src.models.volume import Dims, MultiModalVolume, PatchGrid, SyntheticDatasetConfig


AXIS_NAMES = ("H", "W", "D")
# Gaussian width of the anatomy falloff, in unit-cube coordinates
ANATOMY_SIGMA = 0.25
NUM_WAVES = 3
LESION_EDGE = 0.5  # voxels


def _check_divisible(dims: Sequence[int], patch_size: Sequence[int]) -> None:
    for name, size, patch in zip(AXIS_NAMES, dims, patch_size):
        if patch < 1 or size % patch:
            raise ShapeError(
                f"axis {name} of size {size} is not divisible by patch size {patch}"
            )


def patchify(array: np.ndarray, patch_size: Dims) -> np.ndarray:
    """(..., C, H, W, D) → (..., n, C, ph, pw, pd), positions in row-major order."""
    *lead, c, h, w, d = array.shape
    _check_divisible((h, w, d), patch_size)
    ph, pw, pd = patch_size
    gh, gw, gd = h // ph, w // pw, d // pd
    x = array.reshape(-1, c, gh, ph, gw, pw, gd, pd)
    x = np.einsum("ncxaybzd->nxyzcabd", x)
    return np.ascontiguousarray(x).reshape(*lead, gh * gw * gd, c, ph, pw, pd)


def unpatchify(blocks: np.ndarray, grid_shape: Dims) -> np.ndarray:
    """Inverse of :func:`patchify`."""
    *lead, n, c, ph, pw, pd = blocks.shape
    gh, gw, gd = grid_shape
    if gh * gw * gd != n:
        raise ShapeError(f"{n} positions do not fill grid {grid_shape}")
    x = blocks.reshape(-1, gh, gw, gd, c, ph, pw, pd)
    x = np.einsum("nxyzcabd->ncxaybzd", x)
    return np.ascontiguousarray(x).reshape(*lead, c, gh * ph, gw * pw, gd * pd)


def partition(volume: MultiModalVolume, patch_size: Dims) -> PatchGrid:
    _check_divisible(volume.dims, patch_size)
    grid_shape = tuple(s // p for s, p in zip(volume.dims, patch_size))
    return PatchGrid(
        patch_size=tuple(patch_size),
        grid_shape=grid_shape,
        blocks=patchify(volume.data, patch_size),
    )


def reassemble(grid: PatchGrid, has_lesion: bool = False) -> MultiModalVolume:
    return MultiModalVolume(
        data=unpatchify(grid.blocks, grid.grid_shape), has_lesion=has_lesion
    )


def stack_volumes(volumes: Sequence[MultiModalVolume]) -> np.ndarray:
    """(N, C, H, W, D) float64 copy of a dataset."""
    if not volumes:
        raise ShapeError("dataset is empty")
    shapes = {v.data.shape for v in volumes}
    if len(shapes) != 1:
        raise ShapeError(f"dataset volumes disagree in shape: {sorted(shapes)}")
    return np.stack([v.data for v in volumes]).astype(np.float64)


def _unit_grid(dims: Dims) -> list[np.ndarray]:
    axes = [(np.arange(size) + 0.5) / size - 0.5 for size in dims]
    return np.meshgrid(*axes, indexing="ij")


def anatomy_template(config: SyntheticDatasetConfig) -> np.ndarray:
    """Shared smooth radial anatomy, one copy per modality shifted by its offset."""
    u, v, w = _unit_grid(config.dims)
    falloff = np.exp(-(u**2 + v**2 + w**2) / (2 * ANATOMY_SIGMA**2))
    shape = config.anatomy_amplitude * (falloff - 0.5)
    offsets = np.asarray(config.modality_offsets, dtype=np.float64)
    return offsets[:, None, None, None] + shape[None]


def _perturbation(
    config: SyntheticDatasetConfig, rng: np.random.Generator
) -> np.ndarray:
    """Per-sample smooth field with per-voxel variance on the order of δ²."""
    u, v, w = _unit_grid(config.dims)
    field = np.zeros(config.dims)
    for _ in range(NUM_WAVES):
        freq = rng.integers(0, 3, size=3)
        if not freq.any():
            freq[rng.integers(3)] = 1
        amplitude = rng.normal(0.0, 0.5)
        phase = rng.uniform(0.0, 2 * math.pi)
        field += amplitude * np.cos(
            2 * math.pi * (freq[0] * u + freq[1] * v + freq[2] * w) + phase
        )
    shifts = rng.normal(0.0, 0.5, size=config.num_modalities)
    return config.diversity * (shifts[:, None, None, None] + field[None])


def _lesion(
    config: SyntheticDatasetConfig, rng: np.random.Generator
) -> np.ndarray | None:
    present = rng.random() < config.lesion_probability
    if not present or config.lesion_fraction == 0.0:
        return None
    dims = np.asarray(config.dims, dtype=np.float64)
    radius = (3 * config.lesion_fraction * dims.prod() / (4 * math.pi)) ** (1 / 3)
    low = np.minimum(radius, dims / 2)
    high = np.maximum(dims - radius, dims / 2)
    center = rng.uniform(low, high)
    grids = np.meshgrid(*[np.arange(int(s)) + 0.5 for s in dims], indexing="ij")
    dist = np.sqrt(sum((g - c) ** 2 for g, c in zip(grids, center)))
    # smooth-edged sphere
    weight = 0.5 * (1.0 - np.tanh((dist - radius) / (2 * LESION_EDGE)))
    return config.lesion_contrast * weight


def _generate_one(
    config: SyntheticDatasetConfig, template: np.ndarray, seed: np.random.SeedSequence
) -> MultiModalVolume:
    rng = np.random.default_rng(seed)
    data = template + _perturbation(config, rng)
    lesion = _lesion(config, rng)
    if lesion is not None:
        data = data + lesion[None]
    return MultiModalVolume(
        data=np.clip(data, 0.0, 1.0).astype(np.float32),
        has_lesion=lesion is not None,
    )


def generate_dataset(config: SyntheticDatasetConfig) -> list[MultiModalVolume]:
    """Generate ``num_samples`` volumes from independent per-sample seed streams.

    Identical configs give bit-identical datasets regardless of worker count.
    """
    template = anatomy_template(config)
    seeds = np.random.SeedSequence(config.seed).spawn(config.num_samples)
    volumes = ordered_map(lambda s: _generate_one(config, template, s), seeds)
    logger.info(
        "Generated synthetic dataset",
        num_samples=config.num_samples,
        diversity=config.diversity,
        lesions=sum(v.has_lesion for v in volumes),
    )
    return volumes
