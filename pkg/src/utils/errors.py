"""
Exception hierarchy shared by the numerical core, the planner and the CLI.

Errors with extra constructor arguments define `__reduce__` so they survive
the trip back from batch worker processes.
"""


class KinoplanError(Exception):
    """Base class for every error raised by the toolkit."""


class ContractError(KinoplanError, ValueError):
    """A precondition on dimensions or parameter ranges was violated."""


class IntegrationDiverged(KinoplanError):
    """The right-hand side produced a non-finite value during integration."""
    def __init__(self, time, message=None):
        self.time = time
        self.message = message
        super().__init__(message or f"integration diverged at t={time:.6g}")

    def __reduce__(self):
        return type(self), (self.time, self.message)


class SingularMatrixError(KinoplanError):
    """A linear system was singular to working precision."""


class UnreachableStateError(KinoplanError):
    """The target lies outside the reachable set of the affine model at every scanned horizon."""


class SteerFailed(KinoplanError):
    """Steering could not connect the nearest node toward the sample."""


class SamplingStarved(KinoplanError):
    """Too many consecutive samples were rejected by the collision checker."""
    def __init__(self, rejections):
        self.rejections = rejections
        super().__init__(f"{rejections} consecutive samples rejected; free space looks empty")

    def __reduce__(self):
        return type(self), (self.rejections,)


class ScenarioError(KinoplanError):
    """A scenario file failed to parse or validate."""
    def __init__(self, message, line=None, path=None):
        self.message = message
        self.line = line
        self.path = path
        where = path or "scenario"
        if line is not None:
            where = f"{where}:{line}"
        super().__init__(f"{where}: {message}")

    def __reduce__(self):
        return type(self), (self.message, self.line, self.path)
