"""Ablation grids over mask strategy, HMP phases, PBT and pyramid depth."""

import itertools

from collections.abc import Callable, Sequence

import pandas as pd

from src.core.errors import AblationError, ConfigError
from src.core.observability import logger
from src.models.mask import HmpConfig, MaskKind, MaskPhase
from src.models.training import (
    AblationArm,
    AblationGrid,
    AblationRow,
    ProbeConfig,
    TrainConfig,
)
from src.models.volume import SyntheticDataset
from src.services.probe import linear_probe
from src.services.training import PretrainService


# dotted paths an ablation may vary between arms
ABLATION_AXES = (
    ("mask", "strategy"),
    ("hmp", "modal_enabled"),
    ("hmp", "position_enabled"),
    ("hmp", "patch_enabled"),
    ("pbt_enabled",),
    ("encoder", "pyramid_levels"),
    ("encoder", "feature_level"),
)
PYRAMID_LEVELS = (1, 2, 4)


def _without_axes(config: TrainConfig) -> dict:
    data = config.model_dump()
    for path in ABLATION_AXES:
        node = data
        for key in path[:-1]:
            node = node[key]
        node.pop(path[-1])
    return data


def _check_arms(arms: Sequence[AblationArm]) -> None:
    if len(arms) < 2:
        raise AblationError(f"an ablation needs at least two arms, got {len(arms)}")
    names = [arm.name for arm in arms]
    if len(set(names)) != len(names):
        raise AblationError(f"ablation arm names must be unique: {names}")
    reference = _without_axes(arms[0].config)
    for arm in arms[1:]:
        if _without_axes(arm.config) != reference:
            raise AblationError(
                f"arm {arm.name!r} differs from {arms[0].name!r} outside the ablation axes"
            )


def _phases_label(config: TrainConfig) -> str:
    if config.mask.strategy is MaskKind.RANDOM:
        return MaskPhase.RANDOM.value
    return "+".join(phase.value for phase in config.hmp.phases)


def _arm(base: TrainConfig, name: str, **update) -> AblationArm:
    return AblationArm(name=name, config=base.model_copy(update=update, deep=True))


def default_grid(base: TrainConfig) -> list[AblationArm]:
    """{random, hmp} × {pbt off, pbt on}."""
    arms = []
    for strategy, pbt in itertools.product(MaskKind, (False, True)):
        mask = base.mask.model_copy(update={"strategy": strategy})
        name = f"{strategy.value}+pbt" if pbt else strategy.value
        arms.append(_arm(base, name, mask=mask, pbt_enabled=pbt))
    return arms


def mask_phase_grid(base: TrainConfig) -> list[AblationArm]:
    """The random baseline plus every non-empty subset of HMP phases."""
    arms = [_arm(base, "random", mask=base.mask.model_copy(update={"strategy": MaskKind.RANDOM}))]
    hmp_mask = base.mask.model_copy(update={"strategy": MaskKind.HMP})
    for flags in itertools.product((True, False), repeat=3):
        if not any(flags):
            continue
        hmp = HmpConfig.model_validate(
            {
                **base.hmp.model_dump(),
                "modal_enabled": flags[0],
                "position_enabled": flags[1],
                "patch_enabled": flags[2],
            }
        )
        name = "hmp[" + "+".join(phase.value for phase in hmp.phases) + "]"
        arms.append(_arm(base, name, mask=hmp_mask, hmp=hmp))
    return arms


def pbt_level_grid(
    base: TrainConfig, levels: Sequence[int] = PYRAMID_LEVELS
) -> list[AblationArm]:
    """PBT at several pyramid depths, encoder depth fixed."""
    arms = []
    for level in levels:
        if base.encoder.depth % level:
            raise ConfigError(
                f"pyramid level count {level} does not divide encoder depth {base.encoder.depth}"
            )
        encoder = base.encoder.model_copy(update={"pyramid_levels": level, "feature_level": None})
        arms.append(_arm(base, f"pbt[L={level}]", encoder=encoder, pbt_enabled=True))
    return arms


GRIDS: dict[AblationGrid, Callable[[TrainConfig], list[AblationArm]]] = {
    AblationGrid.DEFAULT: default_grid,
    AblationGrid.MASK_PHASES: mask_phase_grid,
    AblationGrid.PBT_LEVELS: pbt_level_grid,
}


class AblationService:
    def __init__(self, probe_config: ProbeConfig | None = None, trainer=PretrainService):
        self.probe_config = probe_config or ProbeConfig()
        self.trainer = trainer

    def _row(self, arm: AblationArm, dataset: SyntheticDataset) -> AblationRow:
        result = self.trainer(arm.config).pretrain(dataset)
        final_eval = result.run_log.final_eval
        probe = linear_probe(result.model, dataset.volumes, self.probe_config)
        return AblationRow(
            name=arm.name,
            strategy=arm.config.mask.strategy,
            phases=_phases_label(arm.config),
            pbt_enabled=arm.config.pbt_enabled,
            pyramid_levels=arm.config.encoder.pyramid_levels,
            l_mim=result.run_log.tail_l_mim(),
            var_estimate=final_eval.var_estimate,
            trivial_score=final_eval.trivial_score,
            effective_rank=final_eval.effective_rank,
            probe_accuracy=probe.accuracy,
        )

    def ablate(self, arms: Sequence[AblationArm], dataset: SyntheticDataset) -> pd.DataFrame:
        """Train every arm on ``dataset`` and tabulate final metrics, one row per arm."""
        _check_arms(arms)
        rows = []
        for arm in arms:
            logger.info("Running ablation arm", arm=arm.name)
            rows.append(self._row(arm, dataset).model_dump(mode="json"))
        columns = list(AblationRow.model_fields)
        return pd.DataFrame(rows, columns=columns)


def ablate(
    arms: Sequence[AblationArm],
    dataset: SyntheticDataset,
    probe_config: ProbeConfig | None = None,
) -> pd.DataFrame:
    return AblationService(probe_config).ablate(arms, dataset)
