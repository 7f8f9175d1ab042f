"""Exception types shared across the package."""


class RdnError(Exception):
    """Base class for all package errors."""


class DimensionError(RdnError, ValueError):
    """Tensor shapes do not satisfy an operation's contract."""


class InputError(RdnError, ValueError):
    """An argument value is outside what an operation accepts."""


class StateError(RdnError, RuntimeError):
    """An operation was called without the state it depends on."""


class FormatError(RdnError, ValueError):
    """A file on disk does not match the expected binary layout."""


class ConfigError(RdnError, ValueError):
    """A run configuration is malformed or incomplete."""
