"""Exception types shared across the package.

Each maps to a process exit code in the CLI: ConfigError -> 1,
DataError -> 2, DivergenceError -> 3.
"""


class MemrecError(Exception):
    """Base class for package-specific failures."""


class ConfigError(MemrecError, ValueError):
    """A configuration value or file is invalid or missing."""


class DataError(MemrecError, RuntimeError):
    """Input data is malformed beyond the tolerated rate, or unreadable."""


class DivergenceError(MemrecError, RuntimeError):
    """Training produced a non-finite loss."""


class UndefinedMetricError(MemrecError, ValueError):
    """A metric has no defined value for the given inputs."""
