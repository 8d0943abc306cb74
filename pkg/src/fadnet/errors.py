"""Exception types shared across the package.

The CLI maps these onto its exit codes: usage/input problems (2), data and
format problems (3), numerical failures (4).
"""


class FadnetError(Exception):
    """Base class for all package errors."""


class DimensionError(FadnetError, ValueError):
    """Tensor shapes do not satisfy an operation's contract."""


class ContractError(FadnetError, ValueError):
    """A precondition of an operation was violated."""


class FormatError(FadnetError, ValueError):
    """A file or byte container is malformed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(FadnetError, ValueError):
    """A configuration value is invalid or incompatible."""


class NumericalError(FadnetError, ArithmeticError):
    """Training produced a non-finite value."""

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot or {}
