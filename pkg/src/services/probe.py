"""Linear probing of frozen encoder features on the synthetic lesion task."""

from collections.abc import Sequence

import numpy as np
import torch

from sklearn.linear_model import LogisticRegression
from sklearn.model_selection import train_test_split
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from src.core.errors import ProbeError
from src.core.observability import logger
from src.models.training import ProbeConfig, ProbeResult
from src.models.volume import MultiModalVolume
from src.network.model import EmimModel
from src.services.volume import stack_volumes


BATCH_SIZE = 32


def pooled_features(model: EmimModel, volumes: Sequence[MultiModalVolume]) -> np.ndarray:
    """Mean over positions of the final-level full-input features, (N, d)."""
    inputs = torch.from_numpy(stack_volumes(volumes))
    pooled = []
    with torch.no_grad():
        for start in range(0, len(volumes), BATCH_SIZE):
            patches = model.patchify(inputs[start : start + BATCH_SIZE].to(model.dtype))
            final = model.encoder_forward(model.embed(patches))[-1]
            pooled.append(final.mean(dim=1).double().numpy())
    return np.concatenate(pooled)


def fit_probe(features: np.ndarray, labels: np.ndarray, config: ProbeConfig) -> ProbeResult:
    """Logistic-regression probe with a held-out split; returns held-out accuracy."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    if features.ndim != 2 or features.shape[0] != labels.shape[0]:
        raise ProbeError(
            f"features {features.shape} do not pair with {labels.shape[0]} labels"
        )
    classes, counts = np.unique(labels, return_counts=True)
    if classes.size < 2:
        raise ProbeError("probe labels contain a single class")

    stratify = labels if counts.min() >= 2 else None
    x_train, x_test, y_train, y_test = train_test_split(
        features,
        labels,
        test_size=config.holdout_fraction,
        random_state=config.seed,
        stratify=stratify,
    )
    if np.unique(y_train).size < 2:
        raise ProbeError("probe training split contains a single class")

    classifier = make_pipeline(
        StandardScaler(),
        LogisticRegression(C=1.0 / config.regularization, max_iter=config.max_iter),
    )
    classifier.fit(x_train, y_train)
    accuracy = float(classifier.score(x_test, y_test))
    logger.info(
        "Linear probe fitted",
        accuracy=accuracy,
        train_size=len(y_train),
        test_size=len(y_test),
    )
    return ProbeResult(accuracy=accuracy, train_size=len(y_train), test_size=len(y_test))


def linear_probe(
    model: EmimModel,
    volumes: Sequence[MultiModalVolume],
    config: ProbeConfig,
    labels: Sequence[int] | None = None,
) -> ProbeResult:
    """Freeze ``model`` and probe lesion presence (or the given labels)."""
    if labels is None:
        labels = [int(v.has_lesion) for v in volumes]
    return fit_probe(pooled_features(model, volumes), np.asarray(labels), config)
