"""Exception types shared across the package."""


class NegdroError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatchError(NegdroError):
    """An array argument does not have the expected shape."""


class DimensionTooLargeError(NegdroError):
    """A subset enumeration was requested for too many covariates."""


class CyclicGraphError(NegdroError):
    """The structural matrix encodes a directed cycle."""


class NearSingularError(NegdroError):
    """The structural system is numerically non-invertible despite an acyclic pattern."""


class UnknownScenarioError(NegdroError):
    """A builtin scenario name was not recognised."""


class NonFiniteError(NegdroError):
    """Solver iterates diverged or produced non-finite values."""


class UpsilonTooLargeError(NegdroError):
    """The proximal parameter exceeds the weak-convexity safety bound."""


class EmptyChildSetError(NegdroError):
    """The relaxed identification check was asked about an empty child set."""


class NoInvariantSubsetError(NegdroError):
    """No covariate subset met the invariance threshold."""


class ConfigError(NegdroError):
    """An experiment configuration failed validation.

    The message carries the JSON field path of the offending entry.
    """


class CsvParseError(NegdroError):
    """A results CSV file could not be parsed; message names the line."""


class EmptySelectionError(NegdroError):
    """A plot selection matched no usable rows."""


class TimeoutExceededError(NegdroError):
    """A cooperative deadline expired inside a long-running method."""
