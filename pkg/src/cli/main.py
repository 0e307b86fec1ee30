"""``emim`` command-line entry point."""

import argparse
import sys

from collections.abc import Callable, Sequence
from pathlib import Path

import numpy as np

from pydantic import ValidationError

from src.cli.config import accepted_keys, load_lab_config
from src.core.config import get_settings
from src.core.errors import EmimError, ExitCode, ShapeError
from src.core.observability import logger
from src.models.encoder import EncoderConfig
from src.models.lab import LabConfig
from src.models.mask import MaskKind
from src.models.training import AblationGrid
from src.models.volume import SyntheticDataset
from src.repositories.checkpoint import CheckpointRepository
from src.repositories.mask_store import save_mask
from src.repositories.reports import ReportRepository
from src.repositories.volume_store import DatasetRepository
from src.services.ablation import GRIDS, AblationService, pbt_level_grid
from src.services.diagnostics import collapse_report, estimate_masked_variance
from src.services.masking import (
    HmpMaskGenerator,
    MaskGenerator,
    RandomMaskGenerator,
    mask_generator_for,
)
from src.services.probe import linear_probe
from src.services.training import PretrainService
from src.services.volume import generate_dataset


CHECKPOINT_NAME = "checkpoint.emim"
MASK_NAME = "mask.txt"


def _encoder_for(lab: LabConfig, dataset: SyntheticDataset) -> EncoderConfig:
    """The configured encoder, resized to the dataset's modalities and dims."""
    data = dataset.volumes[0].data
    return EncoderConfig.model_validate(
        {
            **lab.encoder.model_dump(),
            "num_modalities": data.shape[0],
            "volume_dims": data.shape[1:],
        }
    )


def _check_shape(dataset: SyntheticDataset, config: EncoderConfig) -> None:
    shape = dataset.volumes[0].data.shape
    if shape != (config.num_modalities, *config.volume_dims):
        raise ShapeError(
            f"dataset volumes {shape} do not match checkpoint encoder "
            f"{(config.num_modalities, *config.volume_dims)}"
        )


def _generator(lab: LabConfig) -> MaskGenerator:
    return mask_generator_for(lab.mask.strategy, lab.mask.ratio, lab.hmp)


def cmd_gen_data(lab: LabConfig, out: Path) -> list[Path]:
    volumes = generate_dataset(lab.gen)
    DatasetRepository().save(SyntheticDataset(volumes=volumes, config=lab.gen), out)
    return [out]


def cmd_estimate_var(lab: LabConfig, out: Path) -> list[Path]:
    dataset = DatasetRepository().load(lab.data.dir)
    est = lab.estimate
    arms = [(strategy, rho) for strategy in est.strategies for rho in est.ratios]
    seeds = np.random.SeedSequence(est.seed).spawn(len(arms))
    rows = []
    for (strategy, rho), seed in zip(arms, seeds):
        if strategy is MaskKind.HMP:
            # the sweep ratio drives the position phase
            hmp = lab.hmp.model_copy(update={"position_ratio": rho})
            generator: MaskGenerator = HmpMaskGenerator(config=hmp)
        else:
            generator = RandomMaskGenerator(ratio=rho)
        estimate = estimate_masked_variance(
            dataset.volumes,
            generator,
            lab.encoder.patch_size,
            est.num_draws,
            np.random.default_rng(seed),
            centering=est.centering,
        )
        rows.append(
            {
                "strategy": strategy.value,
                "rho": rho,
                "mean_var": estimate.mean_var,
                "std_error": estimate.std_error,
                "num_draws": estimate.num_draws,
            }
        )
    threshold = get_settings().convergence_threshold
    return [ReportRepository(out).write_variance_table(rows, threshold)]


def cmd_mask_preview(lab: LabConfig, out: Path) -> list[Path]:
    rng = np.random.default_rng(lab.preview.seed)
    mask = _generator(lab)(lab.encoder.num_positions, lab.encoder.num_modalities, rng)
    mask = mask.model_copy(update={"seed": lab.preview.seed})
    logger.info(
        "Mask preview",
        masked=mask.masked_count,
        by_phase={str(k): v for k, v in mask.count_by_phase().items()},
    )
    out.mkdir(parents=True, exist_ok=True)
    return [save_mask(mask, out / MASK_NAME)]


def cmd_pretrain(lab: LabConfig, out: Path) -> list[Path]:
    dataset = DatasetRepository().load(lab.data.dir)
    config = lab.train_config(_encoder_for(lab, dataset))
    result = PretrainService(config).pretrain(dataset)
    reports = ReportRepository(out)
    return [
        CheckpointRepository().save(result.model, out / CHECKPOINT_NAME),
        *reports.write_run_log(result.run_log),
    ]


def cmd_diagnose(lab: LabConfig, out: Path) -> list[Path]:
    model = CheckpointRepository().load(lab.diagnose.checkpoint)
    dataset = DatasetRepository().load(lab.data.dir)
    _check_shape(dataset, model.config)
    report = collapse_report(
        model,
        dataset.volumes,
        _generator(lab),
        lab.diagnose.probe_size,
        np.random.default_rng(lab.diagnose.seed),
        num_draws=lab.diagnose.num_draws,
    )
    return ReportRepository(out).write_collapse_report(report)


def cmd_probe(lab: LabConfig, out: Path) -> list[Path]:
    model = CheckpointRepository().load(lab.probe.checkpoint)
    dataset = DatasetRepository().load(lab.data.dir)
    _check_shape(dataset, model.config)
    result = linear_probe(model, dataset.volumes, lab.probe_config())
    return [ReportRepository(out).write_probe(result)]


def cmd_ablate(lab: LabConfig, out: Path) -> list[Path]:
    dataset = DatasetRepository().load(lab.data.dir)
    base = lab.train_config(_encoder_for(lab, dataset))
    if lab.ablate.grid is AblationGrid.PBT_LEVELS:
        arms = pbt_level_grid(base, lab.ablate.levels)
    else:
        arms = GRIDS[lab.ablate.grid](base)
    table = AblationService(lab.probe_config()).ablate(arms, dataset)
    return [ReportRepository(out).write_ablation(table)]


COMMANDS: dict[str, tuple[Callable[[LabConfig, Path], list[Path]], str]] = {
    "gen-data": (cmd_gen_data, "generate a synthetic dataset into the output directory"),
    "estimate-var": (
        cmd_estimate_var,
        "sweep masked-view variance over ratios and strategies; "
        "set estimate.centering=mask_unit to compare hmp with random",
    ),
    "mask-preview": (cmd_mask_preview, "sample one mask and write it as text"),
    "pretrain": (cmd_pretrain, "pretrain an encoder; writes checkpoint and run logs"),
    "diagnose": (cmd_diagnose, "collapse report for a checkpoint"),
    "probe": (cmd_probe, "linear probe accuracy of a checkpoint"),
    "ablate": (cmd_ablate, "train an ablation grid and tabulate final metrics"),
}


def _keys_epilog() -> str:
    return "accepted keys (--set key=value or config file lines):\n" + "\n".join(
        f"  {key}" for key in accepted_keys()
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="emim",
        description="Desk-scale lab for masked image modeling collapse.",
        epilog=_keys_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sub = subparsers.add_parser(
            name,
            help=help_text,
            description=help_text,
            epilog=_keys_epilog(),
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        sub.add_argument("--config", type=Path, help="key=value config file")
        sub.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override one key; repeatable",
        )
        sub.add_argument("--out", type=Path, help="output directory (default: EMIM_OUTPUT_DIR)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handler, _ = COMMANDS[args.command]
    out = args.out or Path(get_settings().output_dir)
    try:
        lab = load_lab_config(args.config, args.overrides)
        logger.info("Running command", command=args.command, out=str(out))
        written = handler(lab, out)
    except ValidationError as exc:
        print(f"error: invalid configuration\n{exc}", file=sys.stderr)
        return ExitCode.CONFIG
    except EmimError as exc:
        logger.error("Command failed", command=args.command, error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    logger.info("Command finished", command=args.command, outputs=[str(p) for p in written])
    return ExitCode.OK


if __name__ == "__main__":
    sys.exit(main())
