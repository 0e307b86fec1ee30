"""Domain models for volumes, masks, encoder features, losses and training."""

from src.models.diagnostics import (
    Centering,
    CollapseReport,
    MaskGraph,
    ProbeRecord,
    TrivialScore,
    VarianceEstimate,
)
from src.models.encoder import EncoderConfig, FeatureSource, LatentFeatures, Precision
from src.models.losses import CrossCorrelationMatrix, LossBreakdown
from src.models.mask import BinaryMask, HmpConfig, MaskedViews, MaskKind, MaskPhase
from src.models.training import (
    AblationArm,
    AblationGrid,
    AblationRow,
    EvalRecord,
    MaskStrategyConfig,
    OptimizerConfig,
    ProbeConfig,
    ProbeResult,
    RunLog,
    StepRecord,
    TrainConfig,
    TrainLoopConfig,
)
from src.models.volume import (
    MultiModalVolume,
    PatchGrid,
    SyntheticDataset,
    SyntheticDatasetConfig,
)

__all__ = [
    "AblationArm",
    "AblationGrid",
    "AblationRow",
    "BinaryMask",
    "Centering",
    "CollapseReport",
    "CrossCorrelationMatrix",
    "EncoderConfig",
    "EvalRecord",
    "FeatureSource",
    "HmpConfig",
    "LatentFeatures",
    "LossBreakdown",
    "MaskGraph",
    "MaskKind",
    "MaskPhase",
    "MaskStrategyConfig",
    "MaskedViews",
    "MultiModalVolume",
    "OptimizerConfig",
    "PatchGrid",
    "Precision",
    "ProbeConfig",
    "ProbeRecord",
    "ProbeResult",
    "RunLog",
    "StepRecord",
    "SyntheticDataset",
    "SyntheticDatasetConfig",
    "TrainConfig",
    "TrainLoopConfig",
    "TrivialScore",
    "VarianceEstimate",
]
