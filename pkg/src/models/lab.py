"""Experiment configuration behind the CLI's dotted ``section.key`` settings."""

from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field

from src.models.diagnostics import Centering
from src.models.encoder import EncoderConfig
from src.models.mask import HmpConfig, MaskKind
from src.models.training import (
    AblationGrid,
    MaskStrategyConfig,
    OptimizerConfig,
    ProbeConfig,
    TrainConfig,
    TrainLoopConfig,
)
from src.models.volume import SyntheticDatasetConfig


class DataConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dir: Path = Path("data")


class EstimateConfig(BaseModel):
    """Mask-ratio × strategy sweep of the masked-view variance."""

    model_config = ConfigDict(extra="forbid")

    ratios: tuple[float, ...] = (0.25, 0.5, 0.75)
    strategies: tuple[MaskKind, ...] = (MaskKind.RANDOM, MaskKind.HMP)
    num_draws: int = Field(default=20000, ge=1)
    centering: Centering = Centering.COORDINATE
    seed: int = Field(default=0, ge=0)


class DiagnoseConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    checkpoint: Path = Path("checkpoint.emim")
    probe_size: int = Field(default=8, ge=2)
    # None → EMIM_EVAL_DRAWS
    num_draws: int | None = Field(default=None, ge=1)
    seed: int = Field(default=0, ge=0)


class ProbeSection(ProbeConfig):
    checkpoint: Path = Path("checkpoint.emim")


class AblateConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    grid: AblationGrid = AblationGrid.DEFAULT
    levels: tuple[int, ...] = (1, 2, 4)


class PreviewConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: int = Field(default=0, ge=0)


class LabConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    gen: SyntheticDatasetConfig = SyntheticDatasetConfig()
    data: DataConfig = DataConfig()
    mask: MaskStrategyConfig = MaskStrategyConfig()
    hmp: HmpConfig = HmpConfig()
    encoder: EncoderConfig = EncoderConfig()
    train: TrainLoopConfig = TrainLoopConfig()
    optim: OptimizerConfig = OptimizerConfig()
    estimate: EstimateConfig = EstimateConfig()
    diagnose: DiagnoseConfig = DiagnoseConfig()
    probe: ProbeSection = ProbeSection()
    ablate: AblateConfig = AblateConfig()
    preview: PreviewConfig = PreviewConfig()

    def train_config(self, encoder: EncoderConfig | None = None) -> TrainConfig:
        return TrainConfig(
            **self.train.model_dump(),
            dataset_dir=self.data.dir,
            mask=self.mask,
            hmp=self.hmp,
            encoder=encoder or self.encoder,
            optimizer=self.optim,
        )

    def probe_config(self) -> ProbeConfig:
        return ProbeConfig(**self.probe.model_dump(exclude={"checkpoint"}))
