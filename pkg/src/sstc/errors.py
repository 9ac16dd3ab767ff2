"""Exception types shared across the package."""


class SstcError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(SstcError, ValueError):
    """Invalid input, violated invariant, or malformed data.

    Inherits from ValueError so callers that do not care about the
    package-specific hierarchy can catch it the usual way.
    """
