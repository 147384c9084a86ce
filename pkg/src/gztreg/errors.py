"""Exception hierarchy shared by all modules."""


class GZTError(Exception):
    """Base class for errors raised by gztreg."""


class NonFiniteError(GZTError, ValueError):
    pass


class NotPositiveDefiniteError(GZTError, ValueError):
    pass


class NoConvergenceError(GZTError, ArithmeticError):
    pass


class MaxIterationsError(NoConvergenceError):
    """Fixed-point iteration of the inverse transform hit its cap."""


class BadLengthError(GZTError, ValueError):
    pass


class BadPermutationError(GZTError, ValueError):
    pass


class MissingCovariateError(GZTError, KeyError):
    pass


class EmptyGroupError(GZTError, ValueError):
    pass


class InconsistentTypesError(GZTError, TypeError):
    pass


class SingularInformationError(GZTError, ArithmeticError):
    pass


class NotNestedError(GZTError, ValueError):
    pass


class NegativeStatisticError(GZTError, ArithmeticError):
    pass


class DegenerateSEError(GZTError, ValueError):
    pass


class BadDesignError(GZTError, ValueError):
    pass


class ConfigError(GZTError, ValueError):
    pass


class EmptyStratumWarning(UserWarning):
    """A correlogram stratum contains no eligible pairs."""


class DataFormatError(GZTError, ValueError):
    """Malformed input file; the message carries the line number."""
