"""Exception hierarchy shared by all modules."""


class SupgDlrError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(SupgDlrError, ValueError):
    pass


class ConfigurationError(SupgDlrError, ValueError):
    pass


class ValidationError(SupgDlrError, ValueError):
    """One or more coefficient assumptions are violated.

    ``violations`` holds one human-readable line per failed check.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class NumericalError(SupgDlrError, ArithmeticError):
    pass


class RankDegeneracy(NumericalError):
    pass


class StabilizationError(NumericalError):
    pass


class DivergenceError(NumericalError):
    pass


class StabilityViolation(NumericalError):
    pass


class DerivationError(SupgDlrError):
    pass
