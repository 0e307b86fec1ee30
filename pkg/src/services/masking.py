"""Mask generators (random baseline and Hybrid Mask Pattern) and mask application."""

import math

from typing import Protocol

import numpy as np

from pydantic import BaseModel, ConfigDict, Field

from src.core.errors import MaskConfigError, ShapeError
from src.models.mask import (
    PHASE_CODES,
    BinaryMask,
    HmpConfig,
    MaskedViews,
    MaskKind,
    MaskPhase,
)
from src.models.volume import Dims, MultiModalVolume, PatchGrid
from src.services.volume import partition, reassemble, unpatchify


def round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def _check_ratio(ratio: float) -> None:
    if not 0.0 <= ratio <= 1.0:
        raise MaskConfigError(f"mask ratio must lie in [0, 1], got {ratio}")


def _random_bits(
    n: int, num_modalities: int, ratio: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    _check_ratio(ratio)
    chosen = rng.choice(n, size=min(round_half_up(ratio * n), n), replace=False)
    bits = np.zeros((num_modalities, n), dtype=bool)
    bits[:, chosen] = True
    log = np.where(bits, PHASE_CODES[MaskPhase.RANDOM], 0).astype(np.int8)
    return bits, log


def random_mask(
    n: int, num_modalities: int, ratio: float, rng: np.random.Generator
) -> BinaryMask:
    """Mask ``round(ratio * n)`` whole positions, every modality at each."""
    bits, log = _random_bits(n, num_modalities, ratio, rng)
    return BinaryMask(bits=bits, mask_ratio=ratio, phase_log=log)


def _check_hmp(num_modalities: int, config: HmpConfig) -> None:
    if (config.modal_enabled or config.patch_enabled) and num_modalities < 2:
        raise MaskConfigError("modal and patch phases need at least two modalities")
    if config.patch_enabled and num_modalities - config.patch_min_visible < 1:
        raise MaskConfigError(
            f"patch phase infeasible: {num_modalities} modalities cannot keep "
            f"{config.patch_min_visible} visible and mask one"
        )


def _subset_size_weights(visible: int, max_size: int) -> np.ndarray:
    """Probability of each subset size 1..max_size under a uniform law on subsets."""
    counts = np.array([math.comb(visible, k) for k in range(1, max_size + 1)], float)
    return counts / counts.sum()


def _hmp_bits(
    n: int, num_modalities: int, config: HmpConfig, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    _check_hmp(num_modalities, config)
    bits = np.zeros((num_modalities, n), dtype=bool)
    log = np.zeros((num_modalities, n), dtype=np.int8)

    def mark(cells: tuple, phase: MaskPhase) -> None:
        fresh = ~bits[cells]
        target = log[cells]
        target[fresh] = PHASE_CODES[phase]
        log[cells] = target
        bits[cells] = True

    if config.modal_enabled:
        modality = int(rng.integers(num_modalities))
        mark((modality, slice(None)), MaskPhase.MODAL)

    if config.position_enabled:
        count = min(round_half_up(config.position_ratio * n), n)
        positions = rng.choice(n, size=count, replace=False)
        mark((slice(None), positions), MaskPhase.POSITION)

    if config.patch_enabled:
        visible_counts = num_modalities - bits.sum(axis=0)
        eligible = np.flatnonzero(visible_counts > config.patch_min_visible)
        count = min(round_half_up(config.patch_positions_ratio * n), eligible.size)
        for position in rng.choice(eligible, size=count, replace=False):
            visible = np.flatnonzero(~bits[:, position])
            max_size = visible.size - config.patch_min_visible
            size = 1 + int(
                rng.choice(max_size, p=_subset_size_weights(visible.size, max_size))
            )
            chosen = rng.choice(visible, size=size, replace=False)
            mark((chosen, position), MaskPhase.PATCH)

    return bits, log


def hmp_mask(
    n: int, num_modalities: int, config: HmpConfig, rng: np.random.Generator
) -> BinaryMask:
    """Hybrid Mask Pattern: modal, then position, then patch phase.

    Each phase only claims still-unmasked cells; phase_log attributes a bit
    to the earliest phase that set it. The patch phase picks, at each chosen
    position, a uniform non-empty subset of the visible modalities that
    leaves at least ``patch_min_visible`` of them visible.
    """
    bits, log = _hmp_bits(n, num_modalities, config, rng)
    return BinaryMask(
        bits=bits, mask_ratio=float(bits.mean()), phase_log=log, seed=config.seed
    )


class MaskGenerator(Protocol):
    kind: MaskKind

    def sample_bits(
        self, n: int, num_modalities: int, rng: np.random.Generator
    ) -> np.ndarray: ...

    def __call__(
        self, n: int, num_modalities: int, rng: np.random.Generator
    ) -> BinaryMask: ...


class RandomMaskGenerator(BaseModel):
    model_config = ConfigDict(frozen=True)

    ratio: float = Field(ge=0.0, le=1.0)
    kind: MaskKind = MaskKind.RANDOM

    def sample_bits(self, n: int, num_modalities: int, rng: np.random.Generator) -> np.ndarray:
        return _random_bits(n, num_modalities, self.ratio, rng)[0]

    def __call__(self, n: int, num_modalities: int, rng: np.random.Generator) -> BinaryMask:
        return random_mask(n, num_modalities, self.ratio, rng)


class HmpMaskGenerator(BaseModel):
    model_config = ConfigDict(frozen=True)

    config: HmpConfig = HmpConfig()
    kind: MaskKind = MaskKind.HMP

    def sample_bits(self, n: int, num_modalities: int, rng: np.random.Generator) -> np.ndarray:
        return _hmp_bits(n, num_modalities, self.config, rng)[0]

    def __call__(self, n: int, num_modalities: int, rng: np.random.Generator) -> BinaryMask:
        return hmp_mask(n, num_modalities, self.config, rng)


def _check_mask_shape(mask: BinaryMask, num_modalities: int, n: int) -> None:
    if mask.bits.shape != (num_modalities, n):
        raise ShapeError(
            f"mask shape {mask.bits.shape} does not match (C, n) = ({num_modalities}, {n})"
        )


def apply_mask(grid: PatchGrid, mask: BinaryMask) -> MaskedViews:
    """Split a patch grid into complementary unmasked and masked views."""
    _check_mask_shape(mask, grid.num_modalities, grid.num_positions)
    # (n, C) order → position-major, modality-minor listing
    by_position = mask.bits.T
    cells = grid.blocks  # (n, C, ph, pw, pd)

    def view(selected: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        positions, modalities = np.nonzero(selected)
        index = np.stack([modalities, positions], axis=1).astype(np.int64)
        return index, cells[positions, modalities]

    unmasked_index, unmasked_blocks = view(~by_position)
    masked_index, masked_blocks = view(by_position)
    return MaskedViews(
        unmasked_index=unmasked_index,
        unmasked_blocks=unmasked_blocks,
        masked_index=masked_index,
        masked_blocks=masked_blocks,
        mask=mask,
    )


def masked_fill(
    volume: MultiModalVolume,
    mask: BinaryMask,
    patch_size: Dims,
    fill_value: float = 0.0,
) -> MultiModalVolume:
    """Replace every voxel of a masked (modality, position) cell by ``fill_value``."""
    grid = partition(volume, patch_size)
    _check_mask_shape(mask, grid.num_modalities, grid.num_positions)
    blocks = np.array(grid.blocks)
    blocks[mask.bits.T] = np.float32(fill_value)
    filled = grid.model_copy(update={"blocks": blocks})
    return reassemble(filled, has_lesion=volume.has_lesion)


def voxel_mask(bits: np.ndarray, patch_size: Dims, grid_shape: Dims) -> np.ndarray:
    """Expand (..., C, n) cell bits to (..., C, H, W, D) voxel bits."""
    *lead, c, n = bits.shape
    cells = np.swapaxes(bits, -1, -2)[..., None, None, None]
    blocks = np.broadcast_to(cells, (*lead, n, c, *patch_size))
    return unpatchify(np.ascontiguousarray(blocks), grid_shape)


def mask_generator_for(strategy: MaskKind, ratio: float, hmp: HmpConfig) -> MaskGenerator:
    if strategy is MaskKind.HMP:
        return HmpMaskGenerator(config=hmp)
    return RandomMaskGenerator(ratio=ratio)
