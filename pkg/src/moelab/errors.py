"""Exception types shared across the lab."""


class MoELabError(Exception):
    """Base class for all errors raised by this package."""


class InvalidConfigError(MoELabError, ValueError):
    """A structural parameter is out of range or inconsistent."""


class InvalidPoolError(MoELabError, ValueError):
    """The routing pool is too small for the requested selection."""


class EmptyPoolError(MoELabError, ValueError):
    """An operation that needs at least one token received none."""


class InvalidShapeError(MoELabError, ValueError):
    """Array shapes do not line up."""


class InvalidInputError(MoELabError, ValueError):
    """Input values are outside the accepted domain (e.g. token id >= vocab)."""


class InvalidComparisonError(MoELabError, ValueError):
    """Two traces do not share the same token-layer universe."""


class EmptyDomainError(MoELabError, ValueError):
    """A trace query referenced a domain tag with no tokens."""


class TrainingAbortError(MoELabError, RuntimeError):
    """Training hit a non-recoverable numeric failure (NaN loss or gradient)."""
