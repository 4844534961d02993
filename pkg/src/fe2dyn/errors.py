"""Exception types shared by the solvers."""


class ConfigError(ValueError):
    """Invalid scenario or model configuration."""


class InvertedElementError(ArithmeticError):
    """A Gauss point reached F <= 0."""


class MicroDivergenceError(RuntimeError):
    """The RVE Newton iteration failed to converge.

    ``trace`` holds the update norms of every iteration that was performed.
    """

    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = list(trace)


class MacroDivergenceError(RuntimeError):
    """The macroscopic Newton iteration failed within a time step."""

    def __init__(self, message, step=None, trace=()):
        super().__init__(message)
        self.step = step
        self.trace = list(trace)


class IllPosedError(RuntimeError):
    """Singular bordered RVE matrix, e.g. from redundant constraints."""
