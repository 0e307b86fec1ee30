"""Torch modules for the shared-weight encoder and its gradients."""

from src.network.gradients import GradientCheckResult, backward, gradient_check
from src.network.model import DualForward, EmimModel

__all__ = [
    "DualForward",
    "EmimModel",
    "GradientCheckResult",
    "backward",
    "gradient_check",
]
