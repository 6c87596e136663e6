"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: configuration problems exit with 2,
solver divergence with 3, and file/format problems with 4.
"""


class LodctError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(LodctError):
    """Invalid configuration value, geometry mismatch, or bad CLI input."""


class ValidationError(ConfigurationError):
    """Input data violates a documented precondition (shape, sign, range)."""


class DivergenceError(LodctError):
    """Iterative solver produced non-finite values.

    Carries the iteration indices at which the divergence was detected.
    """

    def __init__(self, message, outer=None, inner=None, subset=None):
        super().__init__(message)
        self.outer = outer
        self.inner = inner
        self.subset = subset


class FileFormatError(LodctError):
    """Malformed PHNT/SINO/STFM file or failed manifest verification."""
