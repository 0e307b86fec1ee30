"""Pretraining loop, optimizer step and learning-rate schedule."""

import math

from collections.abc import Sequence

import numpy as np
import torch

from pydantic import BaseModel, ConfigDict

from src.core.config import get_settings
from src.core.errors import MissingInputError, NumericalAbort, NumericalError, ShapeError
from src.core.observability import logger
from src.models.diagnostics import VarianceEstimate
from src.models.training import EvalRecord, OptimizerConfig, RunLog, StepRecord, TrainConfig
from src.models.volume import MultiModalVolume, SyntheticDataset
from src.network.gradients import backward
from src.network.model import EmimModel
from src.repositories.volume_store import DatasetRepository
from src.services.diagnostics import collapse_report, estimate_masked_variance
from src.services.losses import compute_losses, mim_loss
from src.services.masking import MaskGenerator, mask_generator_for, voxel_mask
from src.services.volume import stack_volumes


def lr_at(step: int, learning_rate: float, warmup_steps: int, total_steps: int) -> float:
    """Linear warmup to ``learning_rate``, then cosine decay towards zero."""
    if step < warmup_steps:
        return learning_rate * (step + 1) / warmup_steps
    decay_steps = max(1, total_steps - warmup_steps)
    progress = min(1.0, (step - warmup_steps) / decay_steps)
    return 0.5 * learning_rate * (1.0 + math.cos(math.pi * progress))


def build_optimizer(
    params: Sequence[torch.nn.Parameter], config: OptimizerConfig
) -> torch.optim.AdamW:
    return torch.optim.AdamW(
        params,
        lr=config.learning_rate,
        betas=(config.beta1, config.beta2),
        eps=config.eps,
        weight_decay=config.weight_decay,
    )


def build_scheduler(
    optimizer: torch.optim.Optimizer, warmup_steps: int, total_steps: int
) -> torch.optim.lr_scheduler.LambdaLR:
    def factor(step: int) -> float:
        return lr_at(step, 1.0, warmup_steps, total_steps)

    return torch.optim.lr_scheduler.LambdaLR(optimizer, factor)


def adam_step(
    optimizer: torch.optim.Optimizer,
    params: Sequence[torch.nn.Parameter],
    grads: Sequence[torch.Tensor],
) -> None:
    """One bias-corrected Adam update with decoupled weight decay."""
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    for param, grad in zip(params, grads):
        if param.shape != grad.shape:
            raise ShapeError(
                f"gradient shape {tuple(grad.shape)} does not match {tuple(param.shape)}"
            )
        param.grad = grad.detach().to(param.dtype)
    optimizer.step()
    optimizer.zero_grad(set_to_none=True)


def _check_dataset(volumes: Sequence[MultiModalVolume], model: EmimModel) -> None:
    config = model.config
    expected = (config.num_modalities, *config.volume_dims)
    for index, volume in enumerate(volumes):
        if volume.data.shape != expected:
            raise ShapeError(
                f"volume {index} has shape {volume.data.shape}, encoder expects {expected}"
            )


def _batch_bits(
    generator: MaskGenerator, size: int, n: int, num_modalities: int, rng: np.random.Generator
) -> np.ndarray:
    return np.stack([generator.sample_bits(n, num_modalities, rng) for _ in range(size)])


def evaluate_reconstruction(
    model: EmimModel,
    volumes: Sequence[MultiModalVolume],
    mask_generator: MaskGenerator,
    rng: np.random.Generator,
) -> float:
    """Masked reconstruction MSE over ``volumes``, one fresh mask each."""
    config = model.config
    inputs = torch.from_numpy(stack_volumes(volumes))
    bits = _batch_bits(
        mask_generator, len(volumes), config.num_positions, config.num_modalities, rng
    )
    mask = torch.from_numpy(voxel_mask(bits, config.patch_size, config.grid_shape))
    with torch.no_grad():
        forward = model.dual_forward(inputs, torch.from_numpy(bits))
        return float(mim_loss(forward.reconstruction, inputs, mask))


class PretrainResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    model: EmimModel
    run_log: RunLog


class PretrainService:
    """Dual-branch pretraining with optional pyramid Barlow Twins terms.

    Step records are indexed by the update they precede (0..total_steps-1);
    evaluation records by the number of updates applied so far, at 0, every
    ``eval_every`` updates and after the last one.
    """

    def __init__(self, config: TrainConfig, dataset_repo: DatasetRepository | None = None):
        self.config = config
        self.dataset_repo = dataset_repo or DatasetRepository()

    def _load(self, dataset: SyntheticDataset | None) -> SyntheticDataset:
        if dataset is not None:
            return dataset
        if self.config.dataset_dir is None:
            raise MissingInputError("no dataset given and no dataset directory configured")
        return self.dataset_repo.load(self.config.dataset_dir)

    def _evaluate(
        self,
        model: EmimModel,
        volumes: list[MultiModalVolume],
        generator: MaskGenerator,
        rng: np.random.Generator,
        step: int,
        variance: VarianceEstimate,
    ) -> EvalRecord:
        model.eval()
        report = collapse_report(
            model,
            volumes,
            generator,
            min(self.config.probe_size, len(volumes)),
            rng,
            variance=variance,
        )
        model.train()
        logger.info(
            "Collapse evaluation",
            step=step,
            trivial_score=report.trivial_score,
            effective_rank=report.effective_rank,
        )
        return EvalRecord(
            step=step,
            var_estimate=report.variance.mean_var,
            trivial_score=report.trivial_score,
            effective_rank=report.effective_rank,
            top_singular_values=report.singular_values[: self.config.top_k_singular],
        )

    def pretrain(self, dataset: SyntheticDataset | None = None) -> PretrainResult:
        config = self.config
        volumes = self._load(dataset).volumes
        model = EmimModel(config.encoder)
        _check_dataset(volumes, model)
        enc = config.encoder

        generator = mask_generator_for(config.mask.strategy, config.mask.ratio, config.hmp)
        train_seed, eval_seed = np.random.SeedSequence(config.seed).spawn(2)
        rng = np.random.default_rng(train_seed)
        eval_rng = np.random.default_rng(eval_seed)

        inputs = torch.from_numpy(stack_volumes(volumes)).to(model.dtype)
        params = list(model.parameters())
        optimizer = build_optimizer(params, config.optimizer)
        scheduler = build_scheduler(optimizer, config.warmup_steps, config.total_steps)
        variance = estimate_masked_variance(
            volumes,
            generator,
            enc.patch_size,
            config.eval_draws or get_settings().eval_draws,
            eval_rng,
        )

        logger.info(
            "Starting pretraining",
            strategy=config.mask.strategy,
            pbt_enabled=config.pbt_enabled,
            total_steps=config.total_steps,
            num_samples=len(volumes),
        )
        steps: list[StepRecord] = []
        evals = [self._evaluate(model, volumes, generator, eval_rng, 0, variance)]
        model.train()
        batch_size = min(config.batch_size, len(volumes))

        for step in range(config.total_steps):
            index = np.sort(rng.choice(len(volumes), size=batch_size, replace=False))
            bits = _batch_bits(generator, batch_size, enc.num_positions, enc.num_modalities, rng)
            mask = torch.from_numpy(voxel_mask(bits, enc.patch_size, enc.grid_shape))
            batch = inputs[torch.from_numpy(index)]
            try:
                forward = model.dual_forward(batch, torch.from_numpy(bits))
                losses = compute_losses(
                    forward,
                    batch,
                    mask,
                    pbt_enabled=config.pbt_enabled,
                    off_diagonal_weight=config.pbt_off_diagonal_weight,
                    full_volume=config.full_volume_loss,
                )
            except NumericalError as exc:
                logger.error("Pretraining aborted", step=step, reason=str(exc))
                raise NumericalAbort(step, str(exc)) from exc

            grads = backward(
                [losses.total], [torch.ones_like(losses.total)], model, retain_graph=False
            )
            adam_step(optimizer, params, [grads[name] for name, _ in model.named_parameters()])
            scheduler.step()
            steps.append(
                StepRecord(
                    step=step,
                    l_mim=losses.l_mim,
                    l_pbt_total=losses.l_pbt_total,
                    l_overall=losses.l_overall,
                )
            )

            done = step + 1
            if done % config.eval_every == 0 or done == config.total_steps:
                evals.append(self._evaluate(model, volumes, generator, eval_rng, done, variance))

        run_log = RunLog(steps=steps, evals=evals)
        logger.info(
            "Finished pretraining",
            tail_l_mim=run_log.tail_l_mim(),
            final_effective_rank=evals[-1].effective_rank,
        )
        return PretrainResult(model=model, run_log=run_log)


def pretrain(config: TrainConfig, dataset: SyntheticDataset | None = None) -> PretrainResult:
    return PretrainService(config).pretrain(dataset)
