"""Exception hierarchy shared by all modules."""


class TrimBisimError(Exception):
    pass


class DimensionError(TrimBisimError, ValueError):
    pass


class DomainError(TrimBisimError, ValueError):
    pass


class NumericalFailure(TrimBisimError, ArithmeticError):
    pass


class CoverageError(DomainError):
    """Input trajectory is shorter than the requested horizon."""


class AlignmentError(DomainError):
    """Horizon is not an integer multiple of the segment length."""


class SynthesisError(NumericalFailure):
    """No time quantization on the search grid satisfies the contraction bound."""

    def __init__(self, message, best_tau=None, best_value=None):
        super().__init__(message)
        self.best_tau = best_tau
        self.best_value = best_value


class ConstructionError(DomainError):
    pass


class ConfigError(TrimBisimError, ValueError):
    pass
