class AnisoACError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(AnisoACError):
    pass


class DomainError(AnisoACError, ValueError):
    """An expression is evaluated outside the set where it is defined."""


class SolverError(AnisoACError):
    """Numerical failure; `step_index` names the time step when known."""

    step_index: int | None = None
    # partial TrustRegionReport when raised from inside the optimizer
    report = None

    def __str__(self) -> str:
        base = super().__str__()
        if self.step_index is None:
            return base
        return f"{base} [time step {self.step_index}]"


class LinearSolverError(SolverError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = residual
        self.iterations = iterations


class IndefiniteOperatorError(LinearSolverError):
    pass


class NewtonError(SolverError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = residual
        self.iterations = iterations


class NonFiniteError(SolverError):
    pass


class OptimizationAborted(SolverError):
    def __init__(self, message: str, report):
        super().__init__(message)
        self.report = report
