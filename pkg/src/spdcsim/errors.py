"""Exception hierarchy shared by every module.

The CLI maps the three top-level families onto distinct exit codes.
"""


class SpdcError(Exception):
    """Base class for all package errors."""


class ConfigError(SpdcError, ValueError):
    """Invalid parameters or configuration documents."""


class FormatError(SpdcError, ValueError):
    """Malformed files, mismatched tick resolutions, bad headers."""


class ContractError(FormatError):
    """Input violates an ordering/shape precondition (e.g. unsorted tags)."""


class NumericalError(SpdcError, ArithmeticError):
    """A numerical procedure could not produce a meaningful result."""


class NormalizationError(NumericalError):
    pass


class FitError(NumericalError):
    """Least-squares fit failed to converge."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ShapeError(NumericalError):
    pass


class NoCorrelationError(NumericalError):
    pass


class ModeNumberError(NumericalError):
    pass


class RegressionError(NumericalError):
    pass


class DomainError(NumericalError):
    """Physical model evaluated outside its domain of validity."""


class SolverError(NumericalError):
    pass


class NoPhaseMatchError(SolverError):
    pass
