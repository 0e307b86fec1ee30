"""Pydantic models for collapse diagnostics."""

from enum import StrEnum

import numpy as np

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.models.mask import MaskKind


class Centering(StrEnum):
    """What a masked voxel's deviation is measured from.

    COORDINATE uses the per-coordinate dataset mean field. MASK_UNIT pools the
    mean over every unit the mask law can pick (a C-modality patch for random
    masking, a single-modality patch for HMP) at the same within-unit offset.
    """

    COORDINATE = "coordinate"
    MASK_UNIT = "mask_unit"


class VarianceEstimate(BaseModel):
    mean_var: float = Field(ge=0.0)
    std_error: float = Field(ge=0.0)
    num_draws: int = Field(ge=0)
    num_skipped: int = Field(default=0, ge=0)
    mask_kind: MaskKind
    centering: Centering = Centering.COORDINATE


class TrivialScore(BaseModel):
    score: float = Field(ge=0.0, le=1.0)
    output_variance: float = Field(ge=0.0)
    input_variance: float = Field(gt=0.0)
    # None when the mean output or the target is constant
    target_correlation: float | None = None


class ProbeRecord(BaseModel):
    probe: int
    volume_index: int
    masked_mse: float
    mean_abs_dev_from_target: float


class CollapseReport(BaseModel):
    """All collapse instruments for one model snapshot."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    variance: VarianceEstimate
    trivial: TrivialScore
    singular_values: list[float]
    effective_rank: float = Field(ge=1.0)
    feature_level: int
    mean_target: np.ndarray
    probes: list[ProbeRecord] = []

    @field_validator("singular_values")
    @classmethod
    def _descending(cls, value: list[float]) -> list[float]:
        if any(s < 0 for s in value):
            raise ValueError("singular values must be nonnegative")
        if any(a < b for a, b in zip(value, value[1:])):
            raise ValueError("singular values must be sorted descending")
        return value

    @model_validator(mode="after")
    def _rank_bound(self) -> "CollapseReport":
        nonzero = sum(1 for s in self.singular_values if s > 0)
        # small slack for floating-point entropy of near-uniform spectra
        if self.effective_rank > nonzero + 1e-9:
            raise ValueError(
                f"effective rank {self.effective_rank} exceeds nonzero count {nonzero}"
            )
        return self

    @property
    def trivial_score(self) -> float:
        return self.trivial.score


class MaskGraph(BaseModel):
    """Overlap graph between masked-view samples.

    ``edge_weights[i, j]`` is the joint frequency of shared unmasked and
    shared masked cells between samples i and j.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    nodes: list[str]
    edge_weights: np.ndarray

    @model_validator(mode="after")
    def _symmetric(self) -> "MaskGraph":
        size = len(self.nodes)
        if self.edge_weights.shape != (size, size):
            raise ValueError("edge weights must be square over the nodes")
        if not np.array_equal(self.edge_weights, self.edge_weights.T):
            raise ValueError("edge weights must be symmetric")
        if self.edge_weights.min(initial=0.0) < 0 or self.edge_weights.max(initial=0.0) > 1:
            raise ValueError("edge weights must lie in [0, 1]")
        return self

    def weight(self, i: int, j: int) -> float:
        return float(self.edge_weights[i, j])
