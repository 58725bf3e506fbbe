"""Exception hierarchy. Library code raises these; the CLI reports them."""

from typing import Optional


class FusionError(Exception):
    """Base class for every error raised by semfusion."""


class DimensionError(FusionError, ValueError):
    """Operand shapes do not fit together."""


class CalibrationError(FusionError, ValueError):
    """Calibration text could not be parsed or violates an invariant."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")


class SemanticsError(FusionError, ValueError):
    """Semantic vectors or boxes violate their invariants."""


class FormatError(FusionError, ValueError):
    """A binary or text file does not match its declared layout."""


class SceneGenerationError(FusionError, RuntimeError):
    """The scene generator could not satisfy its placement constraints."""


class DivergenceError(FusionError, FloatingPointError):
    """Training produced a non-finite loss or gradient."""


class ScheduleError(FusionError, ValueError):
    """A learning-rate schedule was queried outside its range."""


class OptimizerError(FusionError, ValueError):
    """Invalid optimizer arguments."""
