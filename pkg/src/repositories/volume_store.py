"""MMV1 volume files and dataset directories."""

from pathlib import Path

import numpy as np

from src.core.errors import FormatErrorCode, MissingInputError, VolumeFormatError
from src.core.keyvalue import dump_lines, flatten, nest, parse_lines
from src.core.observability import logger
from src.models.volume import MultiModalVolume, SyntheticDataset, SyntheticDatasetConfig


MAGIC = b"MMV1"
HEADER_DTYPE = np.dtype([("magic", "S4"), ("dims", "<u4", (4,))])
# payload size must stay addressable as a u32 byte count
MAX_PAYLOAD_BYTES = 2**32 - 1


def encode_volume(volume: MultiModalVolume) -> bytes:
    header = np.zeros((), dtype=HEADER_DTYPE)
    header["magic"] = MAGIC
    header["dims"] = volume.data.shape
    return header.tobytes() + volume.data.astype("<f4").tobytes()


def decode_volume(payload: bytes, has_lesion: bool = False) -> MultiModalVolume:
    """Decode an MMV1 byte string; never returns a partial volume."""
    if len(payload) < 4 or payload[:4] != MAGIC:
        raise VolumeFormatError(FormatErrorCode.BAD_MAGIC, f"expected {MAGIC!r} header")
    if len(payload) < HEADER_DTYPE.itemsize:
        raise VolumeFormatError(FormatErrorCode.TRUNCATED, "header is incomplete")
    header = np.frombuffer(payload[: HEADER_DTYPE.itemsize], dtype=HEADER_DTYPE)[0]
    dims = tuple(int(d) for d in header["dims"])
    count = int(np.prod(dims, dtype=object))
    if 0 in dims or count * 4 > MAX_PAYLOAD_BYTES:
        raise VolumeFormatError(
            FormatErrorCode.DIMENSION_OVERFLOW, f"header dims {dims} are not a valid volume"
        )
    body = payload[HEADER_DTYPE.itemsize :]
    if len(body) != count * 4:
        raise VolumeFormatError(
            FormatErrorCode.TRUNCATED,
            f"header declares {count * 4} payload bytes, file holds {len(body)}",
        )
    data = np.frombuffer(body, dtype="<f4").reshape(dims)
    try:
        return MultiModalVolume(data=data.astype(np.float32), has_lesion=has_lesion)
    except ValueError as exc:
        raise VolumeFormatError(FormatErrorCode.VALUE_RANGE, str(exc)) from exc


def save_volume(volume: MultiModalVolume, path: Path) -> Path:
    path = Path(path)
    path.write_bytes(encode_volume(volume))
    return path


def load_volume(path: Path, has_lesion: bool = False) -> MultiModalVolume:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"volume file not found: {path}")
    return decode_volume(path.read_bytes(), has_lesion)


class DatasetRepository:
    """Dataset directories: ``sample_XXXX.mmv`` files plus ``manifest.txt``.

    The manifest carries the generator config as ``gen.*`` lines, then one
    ``file.XXXX`` and one ``label.XXXX`` line per volume.
    """

    MANIFEST = "manifest.txt"

    def _file_name(self, index: int) -> str:
        return f"sample_{index:04d}.mmv"

    def _to_manifest(self, dataset: SyntheticDataset) -> str:
        pairs = flatten(dataset.config, "gen.") if dataset.config is not None else {}
        for index in range(len(dataset)):
            pairs[f"file.{index:04d}"] = self._file_name(index)
        for index, volume in enumerate(dataset.volumes):
            pairs[f"label.{index:04d}"] = str(int(volume.has_lesion))
        return dump_lines(pairs)

    def save(self, dataset: SyntheticDataset, directory: Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for index, volume in enumerate(dataset.volumes):
            save_volume(volume, directory / self._file_name(index))
        (directory / self.MANIFEST).write_text(self._to_manifest(dataset))
        logger.info("Saved dataset", directory=str(directory), num_samples=len(dataset))
        return directory

    def load(self, directory: Path) -> SyntheticDataset:
        directory = Path(directory)
        manifest = directory / self.MANIFEST
        if not manifest.is_file():
            raise MissingInputError(f"dataset manifest not found: {manifest}")
        pairs = parse_lines(manifest.read_text(), source=str(manifest))

        gen = {k.removeprefix("gen."): v for k, v in pairs.items() if k.startswith("gen.")}
        config = (
            SyntheticDatasetConfig.model_validate(nest(SyntheticDatasetConfig, gen, "gen."))
            if gen
            else None
        )
        files = sorted(k for k in pairs if k.startswith("file."))
        if not files:
            raise MissingInputError(f"dataset manifest lists no volumes: {manifest}")
        volumes = []
        for key in files:
            index = key.removeprefix("file.")
            label = pairs.get(f"label.{index}", "0") == "1"
            volumes.append(load_volume(directory / pairs[key], has_lesion=label))
        logger.info("Loaded dataset", directory=str(directory), num_samples=len(volumes))
        return SyntheticDataset(volumes=volumes, config=config)
