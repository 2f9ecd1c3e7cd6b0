"""Exception types shared across the package.

The CLI maps these onto process exit codes: validation problems exit 2,
numerical failures exit 3, and file/data problems exit 4.
"""

__all__ = ["GplinkError", "ValidationError", "NumericalError", "DataError"]


class GplinkError(Exception):
    """Base class for errors raised by gplink."""


class ValidationError(GplinkError, ValueError):
    """A contract violation: bad shapes, illegal options, invalid networks."""


class NumericalError(GplinkError, RuntimeError):
    """A numerical failure that survived the jitter escalation policy."""


class DataError(GplinkError):
    """Malformed or unreadable input data (CSV/JSON files)."""
