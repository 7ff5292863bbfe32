"""Error types raised across the package."""


class StoresimError(Exception):
    """Base class for all package errors."""


class InfeasibleDecision(StoresimError):
    pass


class InvalidRegime(StoresimError):
    pass


class InvalidThresholds(StoresimError):
    pass


class UnsupportedModel(StoresimError):
    pass


class ConditionViolated(StoresimError):
    pass


class NoConvergence(StoresimError):
    def __init__(self, max_iter, span_residual, eta=None):
        self.max_iter = max_iter
        self.span_residual = span_residual
        self.eta = eta
        super().__init__(
            f"no convergence after {max_iter} sweeps (span residual {span_residual!r})"
        )


class InvalidGrid(StoresimError):
    pass


class HypothesisViolated(StoresimError):
    pass


class TargetInfeasible(StoresimError):
    pass


class ParseError(StoresimError):
    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")


class GapError(StoresimError):
    def __init__(self, start, end, message="gap in time series"):
        self.start = start
        self.end = end
        super().__init__(f"{message}: {start} .. {end}")


class UnitError(StoresimError):
    pass


class SingularDesign(StoresimError):
    pass


class InsufficientData(StoresimError):
    pass
