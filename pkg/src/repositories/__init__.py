"""Repository layer for on-disk formats."""

from src.repositories.checkpoint import CheckpointRepository
from src.repositories.reports import ReportRepository
from src.repositories.volume_store import DatasetRepository

__all__ = [
    "CheckpointRepository",
    "DatasetRepository",
    "ReportRepository",
]
