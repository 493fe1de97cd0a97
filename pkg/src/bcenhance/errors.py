"""Exception types shared across the package.

Each maps to a distinct CLI exit code so shell callers can tell a bad
configuration from bad data from a numerical blow-up.
"""


class BcenhanceError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(BcenhanceError):
    """Invalid or inconsistent configuration (unknown key, bad value, missing field)."""


class DataError(BcenhanceError):
    """Unreadable, malformed, or semantically unusable input data."""


class DimensionError(BcenhanceError):
    """Array shape incompatible with the operation that received it."""


class NumericError(BcenhanceError):
    """A computation produced non-finite values or otherwise diverged."""
