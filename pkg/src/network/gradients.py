"""Reverse-mode parameter gradients and the central finite-difference check."""

from collections.abc import Callable, Sequence

import numpy as np
import torch
import torch.nn as nn

from pydantic import BaseModel

from src.core.errors import GradientError


def backward(
    outputs: Sequence[torch.Tensor],
    output_grads: Sequence[torch.Tensor],
    model: nn.Module,
    retain_graph: bool = True,
) -> dict[str, torch.Tensor]:
    """Gradients of every named parameter given gradients at ``outputs``.

    Contributions from both branches of the shared encoder are summed by the
    graph itself since both read the same parameter tensors. Parameters that
    do not influence the outputs get zero gradients.
    """
    if len(outputs) != len(output_grads):
        raise GradientError(f"{len(outputs)} outputs but {len(output_grads)} output gradients")
    for position, output in enumerate(outputs):
        if output.grad_fn is None and not output.requires_grad:
            raise GradientError(f"output {position} has no forward graph to differentiate")
    named = list(model.named_parameters())
    grads = torch.autograd.grad(
        list(outputs),
        [param for _, param in named],
        grad_outputs=list(output_grads),
        retain_graph=retain_graph,
        allow_unused=True,
    )
    return {
        name: torch.zeros_like(param) if grad is None else grad
        for (name, param), grad in zip(named, grads)
    }


class GradientCheckResult(BaseModel):
    name: str
    index: int
    analytic: float
    numeric: float
    relative_error: float


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def gradient_check(
    model: nn.Module,
    loss_fn: Callable[[], torch.Tensor],
    rng: np.random.Generator,
    coords_per_tensor: int = 20,
    step: float = 1e-5,
) -> list[GradientCheckResult]:
    """Compare autograd against central differences on random coordinates.

    ``loss_fn`` must rebuild the forward pass from the current parameters.
    Each parameter is perturbed in place and restored afterwards.
    """
    loss = loss_fn()
    grads = backward([loss], [torch.ones_like(loss)], model, retain_graph=False)

    results = []
    for name, param in model.named_parameters():
        flat = param.data.view(-1)
        count = min(coords_per_tensor, flat.numel())
        for index in rng.choice(flat.numel(), size=count, replace=False):
            index = int(index)
            original = flat[index].item()
            with torch.no_grad():
                flat[index] = original + step
                plus = loss_fn().item()
                flat[index] = original - step
                minus = loss_fn().item()
                flat[index] = original
            numeric = (plus - minus) / (2 * step)
            analytic = grads[name].reshape(-1)[index].item()
            results.append(
                GradientCheckResult(
                    name=name,
                    index=index,
                    analytic=analytic,
                    numeric=numeric,
                    relative_error=relative_error(analytic, numeric),
                )
            )
    return results
