"""Pydantic models for binary masks, masked views and the HMP configuration."""

from enum import StrEnum

import numpy as np

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class MaskPhase(StrEnum):
    """Which step of a mask generator set a bit."""

    MODAL = "modal"
    POSITION = "position"
    PATCH = "patch"
    RANDOM = "random"


# phase_log stores small integer codes; 0 means "not masked"
PHASE_CODES: dict[MaskPhase, int] = {
    MaskPhase.MODAL: 1,
    MaskPhase.POSITION: 2,
    MaskPhase.PATCH: 3,
    MaskPhase.RANDOM: 4,
}
PHASE_BY_CODE: dict[int, MaskPhase] = {code: phase for phase, code in PHASE_CODES.items()}


class MaskKind(StrEnum):
    RANDOM = "random"
    HMP = "hmp"


class BinaryMask(BaseModel):
    """Per-(modality, position) mask; ``bits[c, i]`` is True when masked."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    bits: np.ndarray
    mask_ratio: float = Field(ge=0.0, le=1.0)
    phase_log: np.ndarray
    seed: int | None = None

    @field_validator("bits")
    @classmethod
    def _check_bits(cls, value: np.ndarray) -> np.ndarray:
        bits = np.ascontiguousarray(value, dtype=bool)
        if bits.ndim != 2:
            raise ValueError(f"mask bits must be 2-D (C, n), got {bits.ndim}-D")
        bits.setflags(write=False)
        return bits

    @field_validator("phase_log")
    @classmethod
    def _check_log(cls, value: np.ndarray) -> np.ndarray:
        log = np.ascontiguousarray(value, dtype=np.int8)
        log.setflags(write=False)
        return log

    @model_validator(mode="after")
    def _log_covers_bits(self) -> "BinaryMask":
        if self.phase_log.shape != self.bits.shape:
            raise ValueError("phase_log shape must match bits shape")
        if not np.array_equal(self.phase_log > 0, self.bits):
            raise ValueError("phase_log must cover exactly the masked bits")
        return self

    @property
    def num_modalities(self) -> int:
        return int(self.bits.shape[0])

    @property
    def num_positions(self) -> int:
        return int(self.bits.shape[1])

    @property
    def masked_count(self) -> int:
        return int(self.bits.sum())

    @property
    def realized_ratio(self) -> float:
        return self.masked_count / self.bits.size

    def phase_of(self, modality: int, position: int) -> MaskPhase | None:
        return PHASE_BY_CODE.get(int(self.phase_log[modality, position]))

    def count_by_phase(self) -> dict[MaskPhase, int]:
        return {
            phase: int((self.phase_log == code).sum())
            for phase, code in PHASE_CODES.items()
        }


class MaskedViews(BaseModel):
    """The complementary unmasked / masked views of a patch grid.

    Each view lists cells in position-major, modality-minor order;
    ``*_index`` rows are (modality, position) and ``*_blocks`` hold the
    matching (ph, pw, pd) voxel blocks.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    unmasked_index: np.ndarray
    unmasked_blocks: np.ndarray
    masked_index: np.ndarray
    masked_blocks: np.ndarray
    mask: BinaryMask

    @property
    def num_unmasked(self) -> int:
        return int(self.unmasked_index.shape[0])

    @property
    def num_masked(self) -> int:
        return int(self.masked_index.shape[0])


class HmpConfig(BaseModel):
    """Hybrid Mask Pattern: modal, position and patch phases applied in order."""

    model_config = ConfigDict(extra="forbid")

    modal_enabled: bool = True
    position_enabled: bool = True
    patch_enabled: bool = True
    position_ratio: float = Field(default=0.5, ge=0.0, le=1.0)
    patch_positions_ratio: float = Field(default=0.25, ge=0.0, le=1.0)
    patch_min_visible: int = Field(default=1, ge=1)
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _one_phase(self) -> "HmpConfig":
        if not (self.modal_enabled or self.position_enabled or self.patch_enabled):
            raise ValueError("at least one HMP phase must be enabled")
        return self

    @property
    def phases(self) -> tuple[MaskPhase, ...]:
        enabled = (
            (MaskPhase.MODAL, self.modal_enabled),
            (MaskPhase.POSITION, self.position_enabled),
            (MaskPhase.PATCH, self.patch_enabled),
        )
        return tuple(phase for phase, on in enabled if on)
