"""Mask text files: a ``C n ρ seed`` header, then one ``c,i`` line per masked bit."""

from pathlib import Path

import numpy as np

from src.core.errors import ConfigError, MissingInputError
from src.core.keyvalue import format_value
from src.models.mask import PHASE_CODES, BinaryMask, MaskPhase


def encode_mask(mask: BinaryMask) -> str:
    seed = "none" if mask.seed is None else str(mask.seed)
    lines = [f"{mask.num_modalities} {mask.num_positions} {format_value(mask.mask_ratio)} {seed}"]
    modalities, positions = np.nonzero(mask.bits)
    lines += [f"{c},{i}" for c, i in zip(modalities.tolist(), positions.tolist())]
    return "\n".join(lines) + "\n"


def decode_mask(text: str, phase: MaskPhase = MaskPhase.RANDOM) -> BinaryMask:
    """Parse a mask file; phase attribution is not stored, so every bit gets ``phase``."""
    lines = [line.strip() for line in text.splitlines() if line.strip()]
    if not lines:
        raise ConfigError("mask file is empty")
    try:
        c, n, ratio, seed = lines[0].split()
        bits = np.zeros((int(c), int(n)), dtype=bool)
        for line in lines[1:]:
            modality, position = (int(part) for part in line.split(","))
            if not (0 <= modality < bits.shape[0] and 0 <= position < bits.shape[1]):
                raise IndexError(f"bit {line!r} lies outside a {c}x{n} mask")
            bits[modality, position] = True
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"malformed mask file: {exc}") from exc
    return BinaryMask(
        bits=bits,
        mask_ratio=float(ratio),
        phase_log=np.where(bits, PHASE_CODES[phase], 0),
        seed=None if seed == "none" else int(seed),
    )


def save_mask(mask: BinaryMask, path: Path) -> Path:
    path = Path(path)
    path.write_text(encode_mask(mask))
    return path


def load_mask(path: Path, phase: MaskPhase = MaskPhase.RANDOM) -> BinaryMask:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"mask file not found: {path}")
    return decode_mask(path.read_text(), phase)
