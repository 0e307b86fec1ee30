"""Error hierarchy shared by every layer.

Each error carries the exit code the CLI reports for it, so command handlers
never map exceptions by hand.
"""

from enum import StrEnum


class ExitCode:
    OK = 0
    CONFIG = 2
    MISSING_INPUT = 3
    NUMERICAL = 4


class EmimError(Exception):
    exit_code: int = 1


class ConfigError(EmimError, ValueError):
    exit_code = ExitCode.CONFIG


class MaskConfigError(ConfigError):
    """Mask configuration that no mask can satisfy."""


class MissingInputError(EmimError, FileNotFoundError):
    exit_code = ExitCode.MISSING_INPUT


class FormatErrorCode(StrEnum):
    BAD_MAGIC = "bad_magic"
    TRUNCATED = "truncated"
    DIMENSION_OVERFLOW = "dimension_overflow"
    SHAPE_MISMATCH = "shape_mismatch"
    VALUE_RANGE = "value_range"
    BAD_TEXT = "bad_text"


class VolumeFormatError(EmimError, ValueError):
    exit_code = ExitCode.MISSING_INPUT

    def __init__(self, code: FormatErrorCode, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


class CheckpointFormatError(VolumeFormatError):
    pass


class ShapeError(EmimError, ValueError):
    exit_code = ExitCode.CONFIG


class DegenerateInputError(EmimError, ValueError):
    exit_code = ExitCode.NUMERICAL


class LossError(EmimError, ValueError):
    exit_code = ExitCode.NUMERICAL


class ProbeError(EmimError, ValueError):
    exit_code = ExitCode.CONFIG


class AblationError(EmimError, ValueError):
    exit_code = ExitCode.CONFIG


class GradientError(EmimError, RuntimeError):
    exit_code = ExitCode.NUMERICAL


class NumericalError(EmimError, ArithmeticError):
    exit_code = ExitCode.NUMERICAL


class NonFiniteActivationError(NumericalError):
    def __init__(self, block: int):
        super().__init__(f"non-finite activation after encoder block {block}")
        self.block = block


class NumericalAbort(NumericalError):
    def __init__(self, step: int, message: str = "non-finite loss"):
        super().__init__(f"{message} at step {step}")
        self.step = step
