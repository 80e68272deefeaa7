"""Exception types raised across the package."""


class PdqnError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(PdqnError, ValueError):
    pass


class InfeasibleDensityError(InvalidArgumentError):
    """Requested edge density cannot give a connected simple graph."""


class DisconnectedGraphError(PdqnError, ValueError):
    pass


class DimensionMismatchError(PdqnError, ValueError):
    pass


class ParseError(PdqnError, ValueError):
    """Malformed LIBSVM input. ``lineno`` is 1-based."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class OracleError(PdqnError, RuntimeError):
    """The centralized reference solver failed to converge."""


class UnsupportedProblemError(PdqnError, TypeError):
    pass


class ConfigError(PdqnError, ValueError):
    pass


class ConsistencyError(PdqnError, RuntimeError):
    """Internal state violated an engine invariant (e.g. a stale cache)."""
