"""Exception hierarchy shared by the codec, trainer, CLI and service."""


class SlimVCError(Exception):
    """Base error. ``exit_code`` is the process status the CLI reports."""

    exit_code: int = 3

    def __init__(self, message: str, detail: str | None = None):
        super().__init__(message)
        self.message = message
        self.detail = detail


class UsageError(SlimVCError):
    """Bad flags, config keys or values supplied by the caller."""

    exit_code = 1


class StorageError(SlimVCError):
    """Unreadable or unwritable files and directories."""

    exit_code = 2


class FormatError(SlimVCError):
    """Bitstream, checkpoint, preset or training-state inconsistencies."""

    exit_code = 3


class TruncatedPayloadError(FormatError):
    """A payload ended before all expected bytes were read."""


class ShapeError(SlimVCError, ValueError):
    """Tensor, channel or width mismatch."""

    exit_code = 3


class NumericalError(SlimVCError):
    """Non-finite losses or activations."""

    exit_code = 4

    def __init__(self, message: str, step: int | None = None, module: str | None = None):
        super().__init__(message)
        self.step = step
        self.module = module


__all__ = [
    "SlimVCError",
    "UsageError",
    "StorageError",
    "FormatError",
    "TruncatedPayloadError",
    "ShapeError",
    "NumericalError",
]
