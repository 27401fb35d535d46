"""Exception hierarchy shared by all kolmo modules."""


class KolmoError(Exception):
    """Base class for all library errors."""


class ConfigError(KolmoError):
    """Invalid user input: malformed model files, bad shapes, bad flags."""


class StructureError(ConfigError):
    """Drift matrix not in canonical lower-block form, or rank condition violated."""


class ExprError(ConfigError):
    """Coefficient expression problem. Carries source position when known."""

    def __init__(self, message, line=None, col=None):
        self.line = line
        self.col = col
        if line is not None:
            message = f"{message} (line {line}, col {col})"
        super().__init__(message)


class NumericalError(KolmoError):
    """Numerical failure: quadrature breakdown, indefinite covariance, overflow."""


class CovarianceError(NumericalError):
    """Covariance matrix not positive definite where it must be."""


class SmallTimeError(NumericalError):
    """Kernel evaluation requested below the minimum allowed time increment."""


class QuadratureError(NumericalError):
    """Quadrature self-check disagreement beyond the allowed factor."""


class SeriesError(NumericalError):
    """Correction series failed to reach tolerance within max_terms."""

    def __init__(self, message, partial_sum=None, terms_used=None):
        super().__init__(message)
        self.partial_sum = partial_sum
        self.terms_used = terms_used


class GrowthError(NumericalError):
    """Declared growth constant too large for the requested horizon."""


class DimensionBudgetError(ConfigError):
    """Requested operation exceeds the supported dimension budget."""
