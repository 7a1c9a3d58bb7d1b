"""Exception hierarchy shared by all fuzzemg modules.

The CLI maps these onto exit codes (config 2, data 3, numerical 4), so
library code should raise the most specific class that applies.
"""


class FuzzemgError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(FuzzemgError):
    """Invalid or missing configuration (manifests, grids, CLI options)."""


class DataError(FuzzemgError):
    """Malformed or contract-violating input data."""


class DegenerateSignalError(DataError):
    """Signal on which the requested operation is undefined (all-zero, constant)."""


class NumericalError(FuzzemgError):
    """Numerical procedure failed (solver breakdown, degenerate training set)."""
