"""Exception types shared across the toolkit."""


class FreqAdvError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(FreqAdvError, ValueError):
    """An array has the wrong rank, a bad channel count, or sizes that do not divide."""


class ShapeMismatch(FreqAdvError, ValueError):
    """Two arrays that must agree in shape do not."""


class NumericError(FreqAdvError, ArithmeticError):
    """A value that must be finite is NaN or infinite."""


class DegenerateInput(FreqAdvError, ValueError):
    """An input carries no usable signal (e.g. an all-zero spectrum)."""


class EmptyEnsemble(FreqAdvError, ValueError):
    """An ensemble needs at least two member models."""


class EmptyInput(FreqAdvError, ValueError):
    """A metric was handed an empty collection."""


class PreconditionError(FreqAdvError, ValueError):
    """A documented caller-side precondition does not hold."""


class DivergenceError(FreqAdvError, ArithmeticError):
    """Training produced a non-finite loss or non-finite parameters."""


class WindowTooLarge(FreqAdvError, ValueError):
    """The SSIM window does not fit inside the image."""


class ConfigError(FreqAdvError, ValueError):
    """An experiment or attack configuration value is invalid."""
