"""Collapse instruments: masked-view variance, trivial-solution score, spectra and mask graphs."""

import itertools
import math

from collections.abc import Sequence

import numpy as np
import torch

from src.core.config import get_settings
from src.core.errors import DegenerateInputError, ShapeError
from src.core.observability import logger
from src.core.parallel import ordered_map
from src.models.diagnostics import (
    Centering,
    CollapseReport,
    MaskGraph,
    ProbeRecord,
    TrivialScore,
    VarianceEstimate,
)
from src.models.encoder import FeatureSource, LatentFeatures
from src.models.mask import MaskedViews, MaskKind
from src.models.volume import Dims, MultiModalVolume
from src.network.model import EmimModel
from src.services.masking import MaskGenerator, voxel_mask
from src.services.volume import patchify, stack_volumes


ZERO_VARIANCE_RTOL = 1e-12


def _squared_deviation_sums(
    stacked: np.ndarray, patch_size: Dims, kind: MaskKind, centering: Centering
) -> np.ndarray:
    """Per-cell sums of squared deviations, shape (N, C, n)."""
    cells = patchify(stacked, patch_size)  # (N, n, C, ph, pw, pd)
    N, n, C = cells.shape[:3]
    cells = cells.reshape(N, n, C, -1)
    if centering is Centering.COORDINATE:
        mean = cells.mean(axis=0, keepdims=True)
    elif kind is MaskKind.RANDOM:
        # unit is the C-modality stack at one position
        mean = cells.mean(axis=(0, 1), keepdims=True)
    else:
        # unit is one single-modality patch
        mean = cells.mean(axis=(0, 1, 2), keepdims=True)
    sums = ((cells - mean) ** 2).sum(axis=-1)
    return np.swapaxes(sums, 1, 2)


def _draw_chunk(
    sums: np.ndarray,
    generator: MaskGenerator,
    size: int,
    seed: np.random.SeedSequence,
    unit_voxels: int,
) -> tuple[np.ndarray, int]:
    rng = np.random.default_rng(seed)
    N, C, n = sums.shape
    values = np.empty(size)
    kept = 0
    for _ in range(size):
        volume = int(rng.integers(N))
        bits = generator.sample_bits(n, C, rng)
        masked = int(bits.sum())
        if masked == 0:
            continue
        values[kept] = sums[volume][bits].sum() / (masked * unit_voxels)
        kept += 1
    return values[:kept], size - kept


def estimate_masked_variance(
    dataset: Sequence[MultiModalVolume],
    mask_generator: MaskGenerator,
    patch_size: Dims,
    num_draws: int,
    rng: np.random.Generator,
    centering: Centering = Centering.COORDINATE,
) -> VarianceEstimate:
    """Monte Carlo estimate of the per-masked-voxel variance Var(x_m).

    Each draw picks a volume and a mask and averages the squared deviation of
    its masked voxels from the dataset mean field. Draws run in fixed-size
    chunks, each with its own spawned seed stream, and are reduced in chunk
    order, so the estimate does not depend on the worker count. Draws that
    mask nothing are skipped and counted.
    """
    if num_draws < 1:
        raise ShapeError(f"num_draws must be at least 1, got {num_draws}")
    stacked = stack_volumes(dataset)
    sums = _squared_deviation_sums(stacked, patch_size, mask_generator.kind, centering)
    unit_voxels = int(np.prod(patch_size))

    chunk = get_settings().mc_chunk_size
    sizes = [min(chunk, num_draws - start) for start in range(0, num_draws, chunk)]
    root = np.random.SeedSequence(int(rng.integers(2**63)))
    jobs = list(zip(sizes, root.spawn(len(sizes))))
    results = ordered_map(
        lambda job: _draw_chunk(sums, mask_generator, job[0], job[1], unit_voxels), jobs
    )
    values = np.concatenate([values for values, _ in results])
    skipped = sum(skipped for _, skipped in results)

    if values.size == 0:
        raise DegenerateInputError(f"all {num_draws} draws masked no voxels")
    std_error = float(values.std() / math.sqrt(values.size)) if values.size > 1 else 0.0
    logger.info(
        "Estimated masked-view variance",
        mask_kind=mask_generator.kind,
        centering=centering,
        num_draws=int(values.size),
        num_skipped=skipped,
    )
    return VarianceEstimate(
        mean_var=float(values.mean()),
        std_error=std_error,
        num_draws=int(values.size),
        num_skipped=skipped,
        mask_kind=mask_generator.kind,
        centering=centering,
    )


def enumerate_random_masks(n: int, num_modalities: int, k: int) -> list[np.ndarray]:
    """Every position-tied (C, n) mask with exactly k masked positions."""
    if not 0 <= k <= n:
        raise ShapeError(f"cannot mask {k} of {n} positions")
    masks = []
    for positions in itertools.combinations(range(n), k):
        bits = np.zeros((num_modalities, n), dtype=bool)
        bits[:, list(positions)] = True
        masks.append(bits)
    return masks


def exhaustive_masked_variance(
    dataset: Sequence[MultiModalVolume],
    masks: Sequence[np.ndarray],
    patch_size: Dims,
    kind: MaskKind = MaskKind.RANDOM,
    centering: Centering = Centering.COORDINATE,
) -> float:
    """Exact Var(x_m) averaged uniformly over every (volume, mask) pair."""
    stacked = stack_volumes(dataset)
    sums = _squared_deviation_sums(stacked, patch_size, kind, centering)
    unit_voxels = int(np.prod(patch_size))
    values = [
        sums[volume][bits].sum() / (bits.sum() * unit_voxels)
        for volume in range(sums.shape[0])
        for bits in masks
        if bits.any()
    ]
    if not values:
        raise DegenerateInputError("no (volume, mask) pair masks any voxel")
    return float(np.mean(values))


def _region_variance(stack: np.ndarray, region: np.ndarray | None) -> float:
    per_voxel = stack.var(axis=0)
    if region is None:
        return float(per_voxel.mean())
    return float(per_voxel[region].mean())


def trivial_solution_score(
    outputs: Sequence[np.ndarray],
    inputs: Sequence[np.ndarray],
    mean_target: np.ndarray | None = None,
    region: np.ndarray | None = None,
) -> TrivialScore:
    """How input-independent a model's reconstructions are.

    Returns 1 − Var(outputs) / Var(inputs), with variances taken across the
    probe set per voxel and averaged over ``region`` (all voxels if None),
    clamped to [0, 1].
    """
    if len(inputs) < 2 or len(outputs) != len(inputs):
        raise DegenerateInputError(
            f"need at least two inputs with one output each, got {len(inputs)} and {len(outputs)}"
        )
    out = np.stack([np.asarray(o, dtype=np.float64) for o in outputs])
    inp = np.stack([np.asarray(i, dtype=np.float64) for i in inputs])
    if out.shape != inp.shape:
        raise ShapeError(f"output shape {out.shape[1:]} does not match input {inp.shape[1:]}")
    if region is not None:
        region = np.broadcast_to(np.asarray(region, dtype=bool), inp.shape[1:])
        if not region.any():
            raise DegenerateInputError("trivial-score region is empty")

    input_variance = _region_variance(inp, region)
    # constant inputs can leave a rounding residue instead of an exact zero
    if input_variance <= ZERO_VARIANCE_RTOL * max(1.0, float(np.mean(inp**2))):
        raise DegenerateInputError("probe inputs have zero variance")
    output_variance = _region_variance(out, region)
    score = float(np.clip(1.0 - output_variance / input_variance, 0.0, 1.0))

    correlation = None
    if mean_target is not None:
        mean_output = out.mean(axis=0)
        target = np.broadcast_to(np.asarray(mean_target, dtype=np.float64), mean_output.shape)
        a = mean_output[region] if region is not None else mean_output.ravel()
        b = target[region] if region is not None else target.ravel()
        if a.std() > 0 and b.std() > 0:
            correlation = float(np.corrcoef(a, b)[0, 1])

    return TrivialScore(
        score=score,
        output_variance=output_variance,
        input_variance=input_variance,
        target_correlation=correlation,
    )


def singular_spectrum(features: LatentFeatures | np.ndarray) -> np.ndarray:
    """Descending singular values of the column-centered feature matrix."""
    matrix = features.matrix if isinstance(features, LatentFeatures) else np.asarray(features)
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or min(matrix.shape) < 1:
        raise ShapeError(f"features must be a non-empty 2-D matrix, got {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise DegenerateInputError("features contain non-finite entries")
    centered = matrix - matrix.mean(axis=0, keepdims=True)
    return np.linalg.svd(centered, compute_uv=False)


def effective_rank(singular_values: Sequence[float] | np.ndarray) -> float:
    """exp of the Shannon entropy of the normalized spectrum."""
    sigma = np.asarray(singular_values, dtype=np.float64)
    if np.any(sigma < 0) or not np.all(np.isfinite(sigma)):
        raise DegenerateInputError("singular values must be finite and nonnegative")
    total = sigma.sum()
    if total <= 0:
        raise DegenerateInputError("effective rank of an all-zero spectrum is undefined")
    p = sigma[sigma > 0] / total
    return float(np.exp(-(p * np.log(p)).sum()))


def _cell_keys(index: np.ndarray, blocks: np.ndarray) -> set[tuple[int, int, bytes]]:
    return {
        (int(c), int(i), np.ascontiguousarray(block).tobytes())
        for (c, i), block in zip(index, blocks)
    }


def build_mask_graph(
    samples: Sequence[MaskedViews], labels: Sequence[str] | None = None
) -> MaskGraph:
    """Overlap graph of masked-view samples.

    Two cells are the same patch when they share modality, position and
    content. ω(i, j) is the fraction of cells both samples leave visible
    times the fraction both mask, so ω > 0 exactly when they share a visible
    patch and a masked patch.
    """
    if len(samples) < 2:
        raise ShapeError("a mask graph needs at least two samples")
    totals = {s.num_unmasked + s.num_masked for s in samples}
    if len(totals) != 1:
        raise ShapeError("mask graph samples must share the (C, n) layout")
    total = totals.pop()
    labels = list(labels) if labels is not None else [f"view_{i}" for i in range(len(samples))]
    if len(labels) != len(samples):
        raise ShapeError("one label per sample is required")

    visible = [_cell_keys(s.unmasked_index, s.unmasked_blocks) for s in samples]
    masked = [_cell_keys(s.masked_index, s.masked_blocks) for s in samples]
    size = len(samples)
    weights = np.zeros((size, size))
    for i in range(size):
        for j in range(i, size):
            shared_visible = len(visible[i] & visible[j]) / total
            shared_masked = len(masked[i] & masked[j]) / total
            weights[i, j] = weights[j, i] = shared_visible * shared_masked
    return MaskGraph(nodes=labels, edge_weights=weights)


def collapse_report(
    model: EmimModel,
    dataset: Sequence[MultiModalVolume],
    mask_generator: MaskGenerator,
    probe_size: int,
    rng: np.random.Generator,
    variance: VarianceEstimate | None = None,
    num_draws: int | None = None,
) -> CollapseReport:
    """Run ``probe_size`` dual forward passes under one shared probe mask.

    The trivial score and per-probe errors are measured on the masked voxels
    of that mask (all voxels if it masks nothing). Pass ``variance`` to reuse
    an estimate, which depends on the data and mask law only.
    """
    config = model.config
    if not 2 <= probe_size <= len(dataset):
        raise ShapeError(f"probe_size must lie in 2..{len(dataset)}, got {probe_size}")
    if variance is None:
        variance = estimate_masked_variance(
            dataset,
            mask_generator,
            config.patch_size,
            num_draws or get_settings().eval_draws,
            rng,
        )

    stacked = stack_volumes(dataset)
    mean_target = stacked.mean(axis=0)
    indices = [int(i) for i in rng.choice(len(dataset), size=probe_size, replace=False)]
    inputs = stacked[indices]

    bits = mask_generator.sample_bits(config.num_positions, config.num_modalities, rng)
    region = voxel_mask(bits, config.patch_size, config.grid_shape)
    if not region.any():
        region = np.ones_like(region)

    with torch.no_grad():
        batch_bits = torch.from_numpy(np.broadcast_to(bits, (probe_size, *bits.shape)).copy())
        forward = model.dual_forward(torch.from_numpy(inputs), batch_bits)
    outputs = forward.reconstruction.double().numpy()

    trivial = trivial_solution_score(list(outputs), list(inputs), mean_target, region)

    level = config.diagnostic_level
    tokens = forward.features_full[level - 1]
    features = LatentFeatures.from_tensor(
        tokens.reshape(-1, tokens.shape[-1]), level, FeatureSource.FULL_INPUT
    )
    sigma = singular_spectrum(features)

    probes = [
        ProbeRecord(
            probe=p,
            volume_index=index,
            masked_mse=float(((outputs[p] - inputs[p])[region] ** 2).mean()),
            mean_abs_dev_from_target=float(np.abs(outputs[p] - mean_target)[region].mean()),
        )
        for p, index in enumerate(indices)
    ]
    report = CollapseReport(
        variance=variance,
        trivial=trivial,
        singular_values=[float(s) for s in sigma],
        effective_rank=effective_rank(sigma),
        feature_level=level,
        mean_target=mean_target,
        probes=probes,
    )
    logger.debug(
        "Collapse report",
        var_estimate=variance.mean_var,
        trivial_score=trivial.score,
        effective_rank=report.effective_rank,
    )
    return report
