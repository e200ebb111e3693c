"""Exception hierarchy shared by every physcp module."""


class PhyscpError(Exception):
    """Base class for all errors raised by physcp."""


class ConfigurationError(PhyscpError, ValueError):
    """Invalid parameters, ranges, axis names or config files."""


class GridMismatchError(PhyscpError, ValueError):
    """Two fields (or a field and a kernel) live on different grids."""


class CompositionError(PhyscpError, ValueError):
    """Kernels built on incompatible grids were combined."""


class StencilSizeError(PhyscpError, ValueError):
    """A kernel is wider than the field it is applied to."""


class SolverError(PhyscpError, RuntimeError):
    """A reference solver failed (instability, blow-up, singular system)."""


class CalibrationError(PhyscpError, ValueError):
    """Empty or malformed calibration data."""
