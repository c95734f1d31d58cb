"""Exception types shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError (and subclasses) -> 3, DivergenceError -> 4.
"""


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class DataError(ValueError):
    """Invalid input data (bad values, missing labels, capacity problems)."""


class FormatError(DataError):
    """Malformed file content (wrong magic number, bad header, bad numerics)."""


class TruncationError(DataError):
    """File payload shorter than its header declares."""


class DivergenceError(RuntimeError):
    """Numerical optimization produced non-finite values."""
