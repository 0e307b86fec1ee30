"""Pydantic models for multi-modal volumes, patch grids and the synthetic generator."""

import numpy as np

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


Dims = tuple[int, int, int]


def _frozen_array(value: np.ndarray, dtype) -> np.ndarray:
    array = np.ascontiguousarray(value, dtype=dtype)
    array.setflags(write=False)
    return array


class MultiModalVolume(BaseModel):
    """A C-modality voxel grid indexed (modality, x, y, z), intensities in [0, 1].

    Data is stored as float32 so that the MMV1 file round trip is bit-exact.
    The array is made read-only on construction.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    data: np.ndarray
    has_lesion: bool = False

    @field_validator("data")
    @classmethod
    def _check_data(cls, value: np.ndarray) -> np.ndarray:
        array = _frozen_array(value, np.float32)
        if array.ndim != 4:
            raise ValueError(f"volume data must be 4-D (C, H, W, D), got {array.ndim}-D")
        if any(size < 1 for size in array.shape):
            raise ValueError(f"volume dimensions must be positive, got {array.shape}")
        if not np.all(np.isfinite(array)):
            raise ValueError("volume contains non-finite values")
        if array.min() < 0.0 or array.max() > 1.0:
            raise ValueError("volume intensities must lie in [0, 1]")
        return array

    @property
    def num_modalities(self) -> int:
        return int(self.data.shape[0])

    @property
    def dims(self) -> Dims:
        _, h, w, d = self.data.shape
        return int(h), int(w), int(d)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MultiModalVolume):
            return NotImplemented
        return (
            self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
        )


class PatchGrid(BaseModel):
    """A volume cut into non-overlapping patches.

    ``blocks`` has shape (n, C, ph, pw, pd); position i enumerates the patch
    grid in row-major (x, y, z) order.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    patch_size: Dims
    grid_shape: Dims
    blocks: np.ndarray

    @field_validator("blocks")
    @classmethod
    def _freeze(cls, value: np.ndarray) -> np.ndarray:
        return _frozen_array(value, value.dtype)

    @model_validator(mode="after")
    def _check_shape(self) -> "PatchGrid":
        n = int(np.prod(self.grid_shape))
        if self.blocks.ndim != 5 or self.blocks.shape[0] != n:
            raise ValueError(
                f"blocks shape {self.blocks.shape} does not match grid {self.grid_shape}"
            )
        if tuple(self.blocks.shape[2:]) != tuple(self.patch_size):
            raise ValueError(
                f"block shape {self.blocks.shape[2:]} does not match patch size {self.patch_size}"
            )
        return self

    @property
    def num_positions(self) -> int:
        return int(self.blocks.shape[0])

    @property
    def num_modalities(self) -> int:
        return int(self.blocks.shape[1])

    @property
    def patches(self) -> list[np.ndarray]:
        return [self.blocks[i] for i in range(self.num_positions)]


class SyntheticDatasetConfig(BaseModel):
    """Parameters of the low-diversity synthetic dataset."""

    model_config = ConfigDict(extra="forbid")

    num_samples: int = Field(default=32, ge=1)
    num_modalities: int = Field(default=4, ge=1)
    dims: Dims = (16, 16, 16)
    diversity: float = Field(default=0.05, ge=0.0)
    modality_offsets: tuple[float, ...] | None = None
    anatomy_amplitude: float = Field(default=0.15, ge=0.0, le=1.0)
    lesion_fraction: float = Field(default=0.01, ge=0.0, le=1.0)
    lesion_contrast: float = Field(default=0.3, ge=0.0, le=1.0)
    lesion_probability: float = Field(default=0.5, ge=0.0, le=1.0)
    seed: int = Field(default=0, ge=0, lt=2**64)

    @field_validator("dims")
    @classmethod
    def _positive_dims(cls, value: Dims) -> Dims:
        if any(size < 1 for size in value):
            raise ValueError(f"dims must be positive, got {value}")
        return value

    @model_validator(mode="after")
    def _fill_offsets(self) -> "SyntheticDatasetConfig":
        if self.modality_offsets is None:
            offsets = np.linspace(0.2, 0.8, self.num_modalities)
            if self.num_modalities == 1:
                offsets = np.array([0.5])
            self.modality_offsets = tuple(float(o) for o in offsets)
        if len(self.modality_offsets) != self.num_modalities:
            raise ValueError(
                f"expected {self.num_modalities} modality offsets, "
                f"got {len(self.modality_offsets)}"
            )
        if any(not 0.0 <= o <= 1.0 for o in self.modality_offsets):
            raise ValueError("modality offsets must lie in [0, 1]")
        return self


class SyntheticDataset(BaseModel):
    """Volumes of one dataset directory with the generator config that made them."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    volumes: list[MultiModalVolume]
    config: SyntheticDatasetConfig | None = None

    @property
    def labels(self) -> np.ndarray:
        """1 for lesion-present volumes, 0 otherwise."""
        return np.array([int(v.has_lesion) for v in self.volumes], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.volumes)
