"""Pydantic models for the shared-weight encoder and its features."""

from enum import StrEnum

import numpy as np
import torch

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.models.volume import Dims


class Precision(StrEnum):
    F64 = "f64"
    F32 = "f32"

    @property
    def dtype(self) -> torch.dtype:
        return torch.float64 if self is Precision.F64 else torch.float32


class FeatureSource(StrEnum):
    FULL_INPUT = "full_input"
    MASKED_INPUT = "masked_input"


class EncoderConfig(BaseModel):
    """Shape and initialization of the encoder, mask embedding and projection g."""

    model_config = ConfigDict(extra="forbid")

    num_modalities: int = Field(default=4, ge=1)
    volume_dims: Dims = (16, 16, 16)
    patch_size: Dims = (4, 4, 4)
    depth: int = Field(default=4, ge=0)
    embed_dim: int = Field(default=64, ge=1)
    num_heads: int = Field(default=4, ge=1)
    mlp_ratio: float = Field(default=2.0, gt=0.0)
    pyramid_levels: int = Field(default=4, ge=1)
    # None → the deepest tap
    feature_level: int | None = None
    seed: int = Field(default=0, ge=0)
    precision: Precision = Precision.F64

    @model_validator(mode="after")
    def _check(self) -> "EncoderConfig":
        for axis, (size, patch) in enumerate(zip(self.volume_dims, self.patch_size)):
            if patch < 1 or size % patch:
                raise ValueError(
                    f"volume axis {axis} ({size}) not divisible by patch size {patch}"
                )
        if self.depth and self.depth % self.pyramid_levels:
            raise ValueError(
                f"depth {self.depth} not divisible by pyramid_levels {self.pyramid_levels}"
            )
        if self.embed_dim % self.num_heads:
            raise ValueError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.feature_level is not None and not (
            1 <= self.feature_level <= len(self.tap_layers)
        ):
            raise ValueError(
                f"feature_level must be within 1..{len(self.tap_layers)}"
            )
        return self

    @property
    def tap_layers(self) -> tuple[int, ...]:
        """Block indices (1-based) after which features are tapped; 0 is the embedding."""
        if self.depth == 0:
            return (0,)
        stride = self.depth // self.pyramid_levels
        return tuple(stride * level for level in range(1, self.pyramid_levels + 1))

    @property
    def grid_shape(self) -> Dims:
        return tuple(s // p for s, p in zip(self.volume_dims, self.patch_size))

    @property
    def num_positions(self) -> int:
        return int(np.prod(self.grid_shape))

    @property
    def patch_voxels(self) -> int:
        return int(np.prod(self.patch_size))

    @property
    def diagnostic_level(self) -> int:
        return self.feature_level or len(self.tap_layers)


class LatentFeatures(BaseModel):
    """An n×d feature matrix tapped at one encoder level."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    level: int
    matrix: np.ndarray
    source: FeatureSource

    @field_validator("matrix")
    @classmethod
    def _check(cls, value: np.ndarray) -> np.ndarray:
        matrix = np.ascontiguousarray(value, dtype=np.float64)
        if matrix.ndim != 2 or min(matrix.shape) < 1:
            raise ValueError(f"features must be a non-empty 2-D matrix, got {matrix.shape}")
        if not np.all(np.isfinite(matrix)):
            raise ValueError("features contain non-finite entries")
        matrix.setflags(write=False)
        return matrix

    @classmethod
    def from_tensor(
        cls, tensor: torch.Tensor, level: int, source: FeatureSource
    ) -> "LatentFeatures":
        return cls(level=level, matrix=tensor.detach().cpu().double().numpy(), source=source)
