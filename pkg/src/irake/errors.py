"""Exception hierarchy shared across the package."""

from __future__ import annotations


class IrakeError(Exception):
    """Base class for every error raised by this package."""


class EmptyText(IrakeError, ValueError):
    pass


class DimensionMismatch(IrakeError, ValueError):
    pass


class BackendUnavailable(IrakeError):
    """A remote LLM or embedding service could not be reached."""


class BackendTimeout(BackendUnavailable):
    pass


class EmptyCompletion(IrakeError):
    pass


class UnparseableJudgment(IrakeError, ValueError):
    pass


class UnparseableDecomposition(IrakeError, ValueError):
    pass


class TemplateError(IrakeError, KeyError):
    pass


class LibraryFrozen(IrakeError):
    pass


class RecordNotSuccessful(IrakeError, ValueError):
    pass


class ConfigError(IrakeError, ValueError):
    pass


class MalformedDataset(IrakeError, ValueError):
    def __init__(self, message: str, index: int | None = None) -> None:
        self.index = index
        prefix = f"record {index}: " if index is not None else ""
        super().__init__(prefix + message)


class AbortedCase(IrakeError):
    """The decomposition output could not be parsed, even after a re-prompt.

    ``partial_trace`` holds the steps completed before the abort.
    """

    def __init__(self, message: str, partial_trace: list | None = None) -> None:
        super().__init__(message)
        self.partial_trace = list(partial_trace or [])
