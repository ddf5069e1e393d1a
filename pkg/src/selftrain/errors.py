"""Exception hierarchy shared across the package."""

from __future__ import annotations


class SelfTrainError(Exception):
    """Base class for all package errors."""


class ConfigError(SelfTrainError):
    pass


class ParseError(SelfTrainError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DuplicateIdError(ParseError):
    pass


class UnknownTagError(ParseError):
    def __init__(self, tag: str, line: int | None = None):
        self.tag = tag
        super().__init__(f"unknown language tag {tag!r}", line)


class EmptyDatasetError(SelfTrainError):
    pass


class EstimationAborted(SelfTrainError):
    pass


class BackendError(SelfTrainError):
    """Failure inside a classifier backend."""

    def __init__(self, message: str, batch_index: int | None = None):
        self.batch_index = batch_index
        if batch_index is not None:
            message = f"batch {batch_index}: {message}"
        super().__init__(message)


class BackendLostError(BackendError):
    """The external backend process went away."""


class ProtocolError(BackendError):
    def __init__(self, message: str, raw: str | None = None, batch_index: int | None = None):
        self.raw = raw
        if raw is not None:
            message = f"{message} (raw line: {raw!r})"
        super().__init__(message, batch_index)


class NumericError(BackendError):
    """Model weights became non-finite."""
