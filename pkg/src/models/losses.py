"""Pydantic models for loss values."""

import numpy as np
import torch

from pydantic import BaseModel, ConfigDict, Field, field_validator


class CrossCorrelationMatrix(BaseModel):
    """Normalized n×n correlation between full-input and masked-input features."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    level: int
    matrix: np.ndarray

    @field_validator("matrix")
    @classmethod
    def _check(cls, value: np.ndarray) -> np.ndarray:
        matrix = np.ascontiguousarray(value, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError(f"cross-correlation must be square, got {matrix.shape}")
        # cosines may overshoot 1 by rounding
        if np.abs(matrix).max(initial=0.0) > 1.0 + 1e-12:
            raise ValueError("cross-correlation entries must lie in [-1, 1]")
        matrix.setflags(write=False)
        return matrix

    @property
    def identity(self) -> np.ndarray:
        return np.eye(self.matrix.shape[0])


class LossBreakdown(BaseModel):
    """Loss components of one step.

    ``l_overall`` is the float sum ``l_mim + l_pbt_total``; ``total`` is the
    differentiable tensor the optimizer backpropagates.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    l_mim: float = Field(ge=0.0)
    l_pbt_per_level: list[float] = []
    l_pbt_total: float = Field(default=0.0, ge=0.0)
    l_overall: float = Field(ge=0.0)
    total: torch.Tensor | None = Field(default=None, exclude=True)
