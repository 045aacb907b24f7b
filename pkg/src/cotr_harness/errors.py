"""Exception hierarchy shared across the harness."""

from __future__ import annotations


class HarnessError(Exception):
    """Base class for every error raised by the harness."""


class ValidationError(HarnessError, ValueError):
    """A precondition on an input value was violated."""


class ConfigError(HarnessError):
    pass


# dataset loading


class FileError(HarnessError):
    pass


class SchemaError(HarnessError):
    pass


class LabelError(HarnessError):
    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


# prompting


class StrategyError(HarnessError, ValueError):
    pass


# remote calls


class ProviderError(HarnessError):
    """Provider answered with a failure that retries did not cure."""

    def __init__(self, message: str, status: int | None = None, body: str = ""):
        super().__init__(message)
        self.status = status
        self.body = body
        # seconds the provider asked us to wait, when it said so
        self.retry_after: float | None = None


class AuthError(ProviderError):
    retryable = False


class RateLimitError(ProviderError):
    retryable = True


class TransportError(HarnessError):
    retryable = True


class UnsupportedLanguageError(ProviderError):
    pass


# metrics


class EmptyError(HarnessError, ValueError):
    pass


class EmptyCorpusError(EmptyError):
    pass


class LengthMismatchError(HarnessError, ValueError):
    pass


# reporting


class IncompatibleRunsError(HarnessError):
    pass
