"""Pydantic models for pretraining, run logs, probing and ablations."""

import math

from enum import StrEnum
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.models.encoder import EncoderConfig
from src.models.mask import HmpConfig, MaskKind


class AblationGrid(StrEnum):
    DEFAULT = "default"
    MASK_PHASES = "mask_phases"
    PBT_LEVELS = "pbt_levels"


class MaskStrategyConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    strategy: MaskKind = MaskKind.RANDOM
    # random masking ratio ρ; HMP uses its own phase ratios
    ratio: float = Field(default=0.75, ge=0.0, le=1.0)


class OptimizerConfig(BaseModel):
    """Adam with decoupled weight decay, linear warmup and cosine decay."""

    model_config = ConfigDict(extra="forbid")

    learning_rate: float = Field(default=3e-4, ge=0.0)
    weight_decay: float = Field(default=0.05, ge=0.0)
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    eps: float = Field(default=1e-8, gt=0.0)
    # None → 10% of total steps
    warmup_steps: int | None = Field(default=None, ge=0)


class TrainLoopConfig(BaseModel):
    """Flat loop settings, the ``train.*`` keys of the CLI."""

    model_config = ConfigDict(extra="forbid")

    pbt_enabled: bool = True
    pbt_off_diagonal_weight: float = Field(default=1.0, ge=0.0)
    full_volume_loss: bool = False
    batch_size: int = Field(default=8, ge=1)
    total_steps: int = Field(default=2000, ge=1)
    eval_every: int = Field(default=100, ge=1)
    probe_size: int = Field(default=8, ge=2)
    top_k_singular: int = Field(default=5, ge=1)
    # Monte Carlo draws for the logged variance; None → EMIM_EVAL_DRAWS
    eval_draws: int | None = Field(default=None, ge=1)
    seed: int = Field(default=0, ge=0)


class TrainConfig(TrainLoopConfig):
    dataset_dir: Path | None = None
    mask: MaskStrategyConfig = MaskStrategyConfig()
    hmp: HmpConfig = HmpConfig()
    encoder: EncoderConfig = EncoderConfig()
    optimizer: OptimizerConfig = OptimizerConfig()

    @property
    def warmup_steps(self) -> int:
        if self.optimizer.warmup_steps is not None:
            return min(self.optimizer.warmup_steps, self.total_steps)
        return math.ceil(0.1 * self.total_steps)


class StepRecord(BaseModel):
    step: int
    l_mim: float
    l_pbt_total: float
    l_overall: float


class EvalRecord(BaseModel):
    step: int
    var_estimate: float
    trivial_score: float
    effective_rank: float
    top_singular_values: list[float]


class RunLog(BaseModel):
    steps: list[StepRecord] = []
    evals: list[EvalRecord] = []

    @field_validator("steps", "evals")
    @classmethod
    def _increasing(cls, records: list) -> list:
        for prev, cur in zip(records, records[1:]):
            if cur.step <= prev.step:
                raise ValueError("run log steps must be strictly increasing")
        return records

    @model_validator(mode="after")
    def _finite(self) -> "RunLog":
        for record in [*self.steps, *self.evals]:
            values = [v for v in record.model_dump().values() if isinstance(v, float)]
            if not all(math.isfinite(v) for v in values):
                raise ValueError(f"non-finite value logged at step {record.step}")
        return self

    @property
    def final_step(self) -> StepRecord | None:
        return self.steps[-1] if self.steps else None

    @property
    def final_eval(self) -> EvalRecord | None:
        return self.evals[-1] if self.evals else None

    def tail_l_mim(self, window: int | None = None) -> float:
        """Mean l_mim over the last ``window`` steps, by default the last tenth of the run."""
        if not self.steps:
            raise ValueError("run log has no steps")
        if window is None:
            window = math.ceil(0.1 * len(self.steps))
        window = max(1, min(window, len(self.steps)))
        return math.fsum(record.l_mim for record in self.steps[-window:]) / window


class ProbeConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    holdout_fraction: float = Field(default=0.5, gt=0.0, lt=1.0)
    regularization: float = Field(default=1.0, gt=0.0)
    max_iter: int = Field(default=1000, ge=1)
    seed: int = Field(default=0, ge=0)


class ProbeResult(BaseModel):
    accuracy: float = Field(ge=0.0, le=1.0)
    train_size: int
    test_size: int


class AblationArm(BaseModel):
    name: str
    config: TrainConfig


class AblationRow(BaseModel):
    name: str
    strategy: MaskKind
    phases: str
    pbt_enabled: bool
    pyramid_levels: int
    l_mim: float
    var_estimate: float
    trivial_score: float
    effective_rank: float
    probe_accuracy: float
