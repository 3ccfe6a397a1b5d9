"""Exception hierarchy shared by the library and the CLI.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, NumericError -> 4.
"""


class MotifcastError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(MotifcastError):
    """Invalid configuration, arguments, or missing input paths."""


class DataError(MotifcastError):
    """Malformed or inconsistent input data."""


class NumericError(MotifcastError):
    """Numerical failure (divergence, non-finite values) during computation."""
