"""Exception types shared across the package.

The CLI maps UsageError to exit code 1 and DataError to exit code 2.
"""


class UsageError(ValueError):
    """Caller violated an argument or configuration contract."""


class DataError(ValueError):
    """Input data is empty, malformed, or inconsistent."""
