"""Exception types shared across the package.

Exit-code mapping used by the CLI: ConfigError -> 2, DivergenceError -> 3,
file/format errors -> 4.
"""


class TdmclError(Exception):
    """Base class for all package errors."""


class ConfigError(TdmclError):
    """Bad configuration: unknown key, type mismatch, out-of-range value."""


class GrowthError(TdmclError):
    """Illegal column growth (duplicate or non-consecutive task id)."""


class WiringError(TdmclError):
    """Illegal long-range wiring or a shape mismatch between wired modules."""


class ControllerStateError(TdmclError):
    """Evolution controller state is degenerate (NaN / non-simplex row)."""


class DivergenceError(TdmclError):
    """Numerical divergence (non-finite membrane or NaN loss)."""

    def __init__(self, message, phase=None, checkpoint=None):
        super().__init__(message)
        self.phase = phase
        self.checkpoint = checkpoint


class DatasetFormatError(TdmclError):
    """Dataset container has a foreign magic string or a malformed header."""


class CorruptDatasetError(TdmclError):
    """Dataset container is truncated or fails its checksum."""

    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset


class CheckpointError(TdmclError):
    """Checkpoint container is unreadable, truncated, or version-mismatched."""
