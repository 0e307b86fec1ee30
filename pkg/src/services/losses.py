"""Reconstruction, pyramid Barlow Twins and joint objectives."""

import math

from collections.abc import Sequence

import numpy as np
import torch

from src.core.errors import DegenerateInputError, LossError, NumericalError, ShapeError
from src.models.losses import CrossCorrelationMatrix, LossBreakdown
from src.network.model import DualForward


def mim_loss(
    reconstruction: torch.Tensor,
    target: torch.Tensor,
    mask: torch.Tensor,
    full_volume: bool = False,
) -> torch.Tensor:
    """Mean squared error over masked voxels, pooled across the batch.

    ``mask`` is a voxel mask broadcastable to the reconstruction. With
    ``full_volume`` every voxel counts.
    """
    if reconstruction.shape != target.shape:
        raise ShapeError(
            f"reconstruction shape {tuple(reconstruction.shape)} "
            f"does not match target {tuple(target.shape)}"
        )
    diff = reconstruction - target.to(reconstruction.dtype)
    if full_volume:
        return (diff**2).mean()
    mask = torch.broadcast_to(mask.to(torch.bool), diff.shape)
    count = int(mask.sum())
    if count == 0:
        raise LossError("mask is empty: no reconstruction target")
    return (torch.where(mask, diff, 0.0) ** 2).sum() / count


def _row_norms(z: torch.Tensor, name: str) -> torch.Tensor:
    norms = z.norm(dim=-1)
    zero = torch.nonzero(norms == 0)
    if zero.numel():
        row = int(zero[0, -1])
        raise DegenerateInputError(f"{name} features have a zero-norm row {row}")
    return norms


def cross_correlation(z_full: torch.Tensor, z_masked: torch.Tensor) -> torch.Tensor:
    """Cosine similarity of every full-input row with every masked-input row.

    Inputs are (..., n, d); the result is (..., n, n) over patch positions.
    """
    if z_full.shape != z_masked.shape:
        raise ShapeError(
            f"feature shapes differ: {tuple(z_full.shape)} vs {tuple(z_masked.shape)}"
        )
    full = z_full / _row_norms(z_full, "full-input").unsqueeze(-1)
    masked = z_masked / _row_norms(z_masked, "masked-input").unsqueeze(-1)
    return full @ masked.transpose(-2, -1)


def to_record(matrix: torch.Tensor, level: int) -> CrossCorrelationMatrix:
    return CrossCorrelationMatrix(level=level, matrix=matrix.detach().cpu().double().numpy())


def pbt_level_loss(
    matrix: torch.Tensor | CrossCorrelationMatrix | np.ndarray,
    off_diagonal_weight: float = 1.0,
) -> torch.Tensor:
    """Σ (1 − C_ii)² + w Σ_{i≠j} C_ij², averaged over any leading batch dims."""
    if isinstance(matrix, CrossCorrelationMatrix):
        matrix = matrix.matrix
    matrix = torch.as_tensor(matrix)
    n = matrix.shape[-1]
    if matrix.ndim < 2 or matrix.shape[-2] != n:
        raise ShapeError(f"cross-correlation must be square, got {tuple(matrix.shape)}")
    diagonal = torch.diagonal(matrix, dim1=-2, dim2=-1)
    off = matrix * (1 - torch.eye(n, dtype=matrix.dtype, device=matrix.device))
    loss = ((1 - diagonal) ** 2).sum(-1) + off_diagonal_weight * (off**2).sum((-2, -1))
    return loss.mean()


def pbt_total_loss(levels: Sequence[torch.Tensor | float]) -> torch.Tensor | float:
    """Unweighted sum over pyramid levels."""
    if not levels:
        raise LossError("pyramid loss needs at least one level")
    return sum(levels[1:], levels[0])


def pyramid_losses(
    features_full: Sequence[torch.Tensor],
    features_masked: Sequence[torch.Tensor],
    off_diagonal_weight: float = 1.0,
) -> list[torch.Tensor]:
    return [
        pbt_level_loss(cross_correlation(full, masked), off_diagonal_weight)
        for full, masked in zip(features_full, features_masked, strict=True)
    ]


def overall_loss(
    l_mim: torch.Tensor,
    l_pbt_total: torch.Tensor | None = None,
    l_pbt_per_level: Sequence[torch.Tensor] = (),
) -> LossBreakdown:
    """Joint objective l_mim + l_pbt_total; PBT terms are optional."""
    mim = l_mim.detach().item()
    pbt = l_pbt_total.detach().item() if l_pbt_total is not None else 0.0
    if not (math.isfinite(mim) and math.isfinite(pbt)):
        raise NumericalError(f"non-finite loss component (l_mim={mim}, l_pbt_total={pbt})")
    total = l_mim + l_pbt_total if l_pbt_total is not None else l_mim
    return LossBreakdown(
        l_mim=mim,
        l_pbt_per_level=[level.detach().item() for level in l_pbt_per_level],
        l_pbt_total=pbt,
        l_overall=mim + pbt,
        total=total,
    )


def compute_losses(
    forward: DualForward,
    target: torch.Tensor,
    mask: torch.Tensor,
    pbt_enabled: bool = True,
    off_diagonal_weight: float = 1.0,
    full_volume: bool = False,
) -> LossBreakdown:
    """All loss components of one dual forward pass."""
    l_mim = mim_loss(forward.reconstruction, target, mask, full_volume)
    if not pbt_enabled:
        return overall_loss(l_mim)
    levels = pyramid_losses(forward.features_full, forward.features_masked, off_diagonal_weight)
    return overall_loss(l_mim, pbt_total_loss(levels), levels)
