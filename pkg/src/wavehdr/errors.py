"""Exception hierarchy shared by every module in the package."""


class WaveHDRError(Exception):
    """Base class for all package errors."""


class ShapeError(WaveHDRError, ValueError):
    """Operand shapes are incompatible."""


class GeometryError(WaveHDRError, ValueError):
    """Spatial extents are invalid for the requested operation."""


class ConfigError(WaveHDRError, ValueError):
    """A configuration value is out of its valid range."""


class GraphStateError(WaveHDRError, RuntimeError):
    """A compute graph was used in an invalid state."""


class NumericError(WaveHDRError, FloatingPointError):
    """Non-finite values were detected."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class DataError(WaveHDRError, OSError):
    """A dataset file is missing or malformed."""
