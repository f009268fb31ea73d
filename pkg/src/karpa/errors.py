"""Exception types shared across the package."""

from __future__ import annotations


class KarpaError(Exception):
    """Base class for all package errors."""


class ConfigError(KarpaError):
    """Invalid or missing configuration."""


class DataError(KarpaError):
    """Problem with input data (triple files, datasets, fixtures)."""


class ParseError(DataError):
    """Malformed text that should have followed a known format.

    Carries the offending line number for file inputs, or the raw text
    for LLM output that could not be parsed.
    """

    def __init__(self, message: str, *, line: int | None = None, raw: str | None = None):
        super().__init__(message)
        self.line = line
        self.raw = raw


class NotFoundError(DataError):
    """Lookup of an unknown entity, relation, or file."""


class ContractError(KarpaError):
    """A call violated an interface precondition (e.g. dimension mismatch)."""


class DomainError(KarpaError):
    """Input outside the mathematical domain of an operation."""


class CapacityError(KarpaError):
    """A resource guard refused to run an unbounded computation."""


class ProviderError(KarpaError):
    """A remote or scripted provider failed."""


class TransportError(ProviderError):
    """Retryable transport-level failure when talking to a provider."""


class EmptyCompletionError(ProviderError):
    """Provider returned no usable completion text."""


class MissingFixtureError(ProviderError):
    """A scripted provider had no entry for the requested digest."""

    def __init__(self, digest: str):
        super().__init__(f"no scripted fixture for digest {digest}")
        self.digest = digest
