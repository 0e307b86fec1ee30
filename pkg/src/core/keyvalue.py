"""Flat ``key=value`` text for configs, manifests and checkpoint headers.

Nested pydantic models map to dotted keys; tuple and list fields are written
comma-separated.
"""

import types
import typing

from enum import Enum
from pathlib import Path
from typing import Any

from pydantic import BaseModel

from src.core.errors import ConfigError


def format_value(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, (tuple, list)):
        return ",".join(format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, Path):
        return value.as_posix()
    return str(value)


def flatten(model: BaseModel, prefix: str = "") -> dict[str, str]:
    """Dotted ``key → text`` pairs in field declaration order."""
    pairs: dict[str, str] = {}
    for name in type(model).model_fields:
        value = getattr(model, name)
        key = f"{prefix}{name}"
        if isinstance(value, BaseModel):
            pairs.update(flatten(value, f"{key}."))
        else:
            pairs[key] = format_value(value)
    return pairs


def dump_lines(pairs: dict[str, str]) -> str:
    return "".join(f"{key}={value}\n" for key, value in pairs.items())


def parse_lines(text: str, source: str = "config") -> dict[str, str]:
    """Parse ``key=value`` lines; blank lines and ``#`` comments are skipped."""
    pairs: dict[str, str] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{source} line {number}: expected key=value, got {line!r}")
        pairs[key.strip()] = value.strip()
    return pairs


def _unwrap_optional(annotation: Any) -> tuple[Any, bool]:
    origin = typing.get_origin(annotation)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(annotation) if a is not type(None)]
        return (args[0] if len(args) == 1 else annotation), True
    return annotation, False


def _model_type(annotation: Any) -> type[BaseModel] | None:
    inner, _ = _unwrap_optional(annotation)
    if isinstance(inner, type) and issubclass(inner, BaseModel):
        return inner
    return None


def _coerce(annotation: Any, raw: str) -> Any:
    inner, optional = _unwrap_optional(annotation)
    if optional and raw.lower() in ("none", ""):
        return None
    if typing.get_origin(inner) in (tuple, list):
        return [part.strip() for part in raw.split(",") if part.strip()]
    return raw


def nest(cls: type[BaseModel], pairs: dict[str, str], prefix: str = "") -> dict[str, Any]:
    """Turn dotted pairs into the nested dict ``cls.model_validate`` expects.

    Raises ConfigError naming the first key that matches no field.
    """
    data: dict[str, Any] = {}
    children: dict[str, dict[str, str]] = {}
    for key, raw in pairs.items():
        name, _, rest = key.partition(".")
        field = cls.model_fields.get(name)
        sub = _model_type(field.annotation) if field is not None else None
        if field is None or (rest and sub is None) or (not rest and sub is not None):
            raise ConfigError(f"unknown config key: {prefix}{key}")
        if rest:
            children.setdefault(name, {})[rest] = raw
        else:
            data[name] = _coerce(field.annotation, raw)
    for name, child in children.items():
        sub = _model_type(cls.model_fields[name].annotation)
        data[name] = nest(sub, child, f"{prefix}{name}.")
    return data


def keys_of(cls: type[BaseModel], prefix: str = "") -> list[str]:
    """Every dotted key accepted by ``cls``."""
    keys = []
    for name, field in cls.model_fields.items():
        sub = _model_type(field.annotation)
        if sub is not None:
            keys.extend(keys_of(sub, f"{prefix}{name}."))
        else:
            keys.append(f"{prefix}{name}")
    return keys
