"""Exception hierarchy.

Validation problems (bad shapes, bad tokens, out-of-range parameters) derive
from :class:`ValidationError`; failures of the numerics on valid input derive
from :class:`NumericalError`.  The CLI maps them to exit codes 1 and 2.
"""


class DualFilterError(Exception):
    pass


class ValidationError(DualFilterError, ValueError):
    pass


class NumericalError(DualFilterError, ArithmeticError):
    pass


class DimensionMismatch(ValidationError):
    pass


class NegativeEntry(ValidationError):
    pass


class RowSumError(ValidationError):
    pass


class TokenOutOfRange(ValidationError):
    pass


class AlphaOutOfRange(ValidationError):
    pass


class NotBinary(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class TooLarge(ValidationError):
    """Exact enumeration would exceed the mass-point budget."""


class ImpossibleObservation(NumericalError):
    """The observed token has zero predictive probability under the filter."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class ZeroProbabilityPrefix(NumericalError):
    pass


class EigenFailure(NumericalError):
    pass


class SolveFailure(NumericalError):
    pass


class DegenerateColumnWarning(UserWarning):
    """An emission column sums to zero; a uniform measure was substituted."""
