"""Loading ``LabConfig`` from a key=value file plus ``--set`` overrides."""

from collections.abc import Sequence
from pathlib import Path

from src.core.errors import ConfigError, MissingInputError
from src.core.keyvalue import keys_of, nest, parse_lines
from src.models.lab import LabConfig


def parse_overrides(overrides: Sequence[str]) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"--set expects key=value, got {item!r}")
        pairs[key.strip()] = value.strip()
    return pairs


def load_lab_config(path: Path | None = None, overrides: Sequence[str] = ()) -> LabConfig:
    """File values first, then overrides in order; unknown keys are rejected by name."""
    pairs: dict[str, str] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise MissingInputError(f"config file not found: {path}")
        pairs.update(parse_lines(path.read_text(), source=str(path)))
    pairs.update(parse_overrides(overrides))
    return LabConfig.model_validate(nest(LabConfig, pairs))


def accepted_keys() -> list[str]:
    return keys_of(LabConfig)
