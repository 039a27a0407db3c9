"""Shared exception types."""


class PromptPermError(Exception):
    """Base class for all package errors."""


class DatasetError(PromptPermError):
    """Malformed or unusable dataset input."""


class ContractViolation(PromptPermError):
    """A documented precondition or invariant was violated by the caller."""


class ConfigError(PromptPermError):
    """Invalid run configuration; maps to CLI exit code 2."""


class TransportError(PromptPermError):
    """Remote scoring service unavailable or replied malformed; retryable.

    Maps to CLI exit code 3.
    """


class UnsupportedCapability(PromptPermError):
    """The oracle does not expose the requested capability (e.g. gradients)."""
