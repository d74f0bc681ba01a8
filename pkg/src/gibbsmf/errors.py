"""Exception types shared across the package.

The CLI maps these onto process exit codes: usage errors exit 2, data
errors exit 3, numerical failures exit 4.
"""


class GibbsMfError(Exception):
    """Base class for all errors raised by this package."""


class DataError(GibbsMfError):
    """Malformed or inconsistent input data (files, triplets, dimensions)."""


class SnapshotError(DataError):
    """Snapshot cannot be read, verified, or resumed from."""


class ConfigError(GibbsMfError):
    """Invalid configuration (bad flag values, unknown keys, bad presets)."""


class NumericalError(GibbsMfError):
    """Numerical failure during sampling (non-finite values, breakdown)."""


class NotPositiveDefinite(NumericalError):
    """Cholesky factorization failed even after the jitter policy."""
