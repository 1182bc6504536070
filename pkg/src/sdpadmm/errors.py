"""Exception types shared across the package."""


class NumericalFailureError(RuntimeError):
    """An iterative numerical routine failed to converge or produced
    unusable output. ``details`` carries routine-specific diagnostics
    (condition estimates, last iterates, decay history, ...)."""

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details


class SdpaFormatError(ValueError):
    """Malformed sparse SDPA (.dat-s) input."""


class UnsupportedBlockError(SdpaFormatError):
    """Structurally valid SDPA file outside the supported single-PSD-block subset."""
