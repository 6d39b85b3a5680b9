"""Exception types shared across the package."""


class GbpGridError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(GbpGridError, ValueError):
    """Raster or grid dimensions are invalid or inconsistent."""


class ParameterError(GbpGridError, ValueError):
    """A scalar parameter is outside its admissible range."""


class ValidationError(GbpGridError, ValueError):
    """A parameter set violates a structural invariant."""


class FileFormatError(GbpGridError, ValueError):
    """A file does not conform to its declared format."""


class SingularSystemError(GbpGridError, ArithmeticError):
    """The information system has no unique solution (unanchored component)."""
