"""EMIM checkpoint files.

Layout, little-endian throughout::

    "EMIM" | u32 config length | config text (encoder.* key=value lines)
    | u32 tensor count | per tensor: u32 name length | name | u32 ndim
    | ndim × u32 dims | f64 payload
"""

from pathlib import Path

import numpy as np
import torch

from pydantic import ValidationError

from src.core.errors import CheckpointFormatError, FormatErrorCode, MissingInputError
from src.core.keyvalue import dump_lines, flatten, nest, parse_lines
from src.core.observability import logger
from src.models.encoder import EncoderConfig
from src.network.model import EmimModel


MAGIC = b"EMIM"
U32 = np.dtype("<u4")
F64 = np.dtype("<f8")


def _u32(value: int) -> bytes:
    return np.array([value], dtype=U32).tobytes()


class _Reader:
    def __init__(self, payload: bytes):
        self.payload = payload
        self.offset = 0

    def take(self, size: int) -> bytes:
        end = self.offset + size
        if end > len(self.payload):
            raise CheckpointFormatError(
                FormatErrorCode.TRUNCATED,
                f"needed {size} bytes at offset {self.offset}, file holds {len(self.payload)}",
            )
        chunk = self.payload[self.offset : end]
        self.offset = end
        return chunk

    def text(self, what: str) -> str:
        raw = self.take(int(self.u32()[0]))
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointFormatError(
                FormatErrorCode.BAD_TEXT, f"{what} at offset {self.offset - len(raw)} is not UTF-8"
            ) from exc

    def u32(self, count: int = 1) -> np.ndarray:
        return np.frombuffer(self.take(count * U32.itemsize), dtype=U32)

    @property
    def exhausted(self) -> bool:
        return self.offset == len(self.payload)


class CheckpointRepository:
    """Save and load models with their encoder config."""

    def _config_text(self, config: EncoderConfig) -> bytes:
        return dump_lines(flatten(config, "encoder.")).encode()

    def encode(self, model: EmimModel) -> bytes:
        config = self._config_text(model.config)
        state = model.state_dict()
        parts = [MAGIC, _u32(len(config)), config, _u32(len(state))]
        for name, tensor in state.items():
            encoded = name.encode()
            array = tensor.detach().cpu().double().numpy()
            parts += [
                _u32(len(encoded)),
                encoded,
                _u32(array.ndim),
                np.asarray(array.shape, dtype=U32).tobytes(),
                array.astype(F64).tobytes(),
            ]
        return b"".join(parts)

    def _config_from(self, text: str) -> EncoderConfig:
        pairs = parse_lines(text, source="checkpoint config")
        encoder = {k.removeprefix("encoder."): v for k, v in pairs.items()}
        try:
            return EncoderConfig.model_validate(nest(EncoderConfig, encoder, "encoder."))
        except ValidationError as exc:
            raise CheckpointFormatError(FormatErrorCode.SHAPE_MISMATCH, str(exc)) from exc

    def decode(self, payload: bytes) -> EmimModel:
        if payload[:4] != MAGIC:
            raise CheckpointFormatError(FormatErrorCode.BAD_MAGIC, f"expected {MAGIC!r} header")
        reader = _Reader(payload)
        reader.take(4)
        config = self._config_from(reader.text("config block"))
        model = EmimModel(config)
        expected = model.state_dict()

        loaded: dict[str, torch.Tensor] = {}
        for _ in range(int(reader.u32()[0])):
            name = reader.text("tensor name")
            shape = tuple(int(d) for d in reader.u32(int(reader.u32()[0])))
            if name not in expected or tuple(expected[name].shape) != shape:
                raise CheckpointFormatError(
                    FormatErrorCode.SHAPE_MISMATCH,
                    f"tensor {name!r} of shape {shape} does not fit the encoder config",
                )
            count = int(np.prod(shape, dtype=np.int64))
            array = np.frombuffer(reader.take(count * F64.itemsize), dtype=F64).reshape(shape)
            loaded[name] = torch.from_numpy(array.copy()).to(model.dtype)

        missing = set(expected) - set(loaded)
        if missing:
            raise CheckpointFormatError(
                FormatErrorCode.SHAPE_MISMATCH, f"checkpoint lacks tensors {sorted(missing)}"
            )
        if not reader.exhausted:
            raise CheckpointFormatError(FormatErrorCode.TRUNCATED, "trailing bytes after tensors")
        model.load_state_dict(loaded)
        return model

    def save(self, model: EmimModel, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.encode(model))
        logger.info("Saved checkpoint", path=str(path))
        return path

    def load(self, path: Path) -> EmimModel:
        path = Path(path)
        if not path.is_file():
            raise MissingInputError(f"checkpoint not found: {path}")
        return self.decode(path.read_bytes())
