"""Exception types raised across the simulator."""

from __future__ import annotations


class FedsimError(Exception):
    """Base class for every error raised by this package."""


class ParseError(FedsimError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InvalidInput(FedsimError, ValueError):
    pass


class InvalidPartition(InvalidInput):
    pass


class ShapeError(InvalidInput):
    pass


class InvalidBatch(InvalidInput):
    pass


class DegenerateSpectrum(FedsimError, ValueError):
    pass


class InvalidSchedule(InvalidInput):
    pass


class ConfigError(InvalidInput):
    pass


class DivergenceError(FedsimError, RuntimeError):
    """The simulated objective became non-finite or exceeded the blow-up guard."""

    def __init__(self, t: int, step_size: float, loss: float):
        self.t = t
        self.step_size = step_size
        self.loss = loss
        super().__init__(f"diverged at t={t} (step size {step_size:g}, loss {loss:g})")


class ConvergenceFailure(FedsimError, RuntimeError):
    def __init__(self, iterations: int, grad_norm: float):
        self.iterations = iterations
        self.grad_norm = grad_norm
        super().__init__(
            f"no convergence after {iterations} iterations (final gradient norm {grad_norm:.3e})"
        )
