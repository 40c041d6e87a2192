"""Exception hierarchy mapped onto the CLI exit codes."""


class InfoshiftError(Exception):
    """Base class; carries the process exit code for the CLI layer."""

    exit_code = 1


class ConfigError(InfoshiftError):
    """Invalid, incomplete, or contradictory configuration."""

    exit_code = 2


class DataError(InfoshiftError):
    """Input data violates a precondition (unreadable, malformed, degenerate)."""

    exit_code = 3


class NumericError(InfoshiftError):
    """Numerical failure during fitting or estimation."""

    exit_code = 4
