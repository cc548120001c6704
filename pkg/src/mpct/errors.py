"""Exception hierarchy shared by all mpct modules."""


class MPCTError(Exception):
    """Base class for every error raised by the package."""


class DimensionError(MPCTError, ValueError):
    pass


class NotControllable(MPCTError):
    pass


class EmptySet(MPCTError):
    pass


class NotSchur(MPCTError):
    pass


class NotConverged(MPCTError):
    """Raised when a set recursion hits its iteration cap.

    The last iterate travels with the exception so callers can fall back to a
    terminal-equality formulation or inspect the partial result.
    """

    def __init__(self, report, message=None):
        self.report = report
        super().__init__(message or f"no fixpoint after {report.iterations} iterations")


class NoContainment(MPCTError):
    pass


class EmptyTightened(MPCTError):
    pass


class NoStabilizingSolution(MPCTError):
    pass


class UnreachableReference(MPCTError):
    pass


class SingularCapacitance(MPCTError):
    pass


class InfeasibleAtStep(MPCTError):
    def __init__(self, step, trace=None):
        self.step = step
        self.trace = trace
        super().__init__(f"controller problem infeasible at step {step}")


class ConfigError(MPCTError):
    pass
