"""Exception hierarchy shared by the solvers and the command-line harness."""


class AsianUVMError(Exception):
    """Base class for all package errors."""


class ConfigError(AsianUVMError, ValueError):
    """Invalid model, grid, scheme or run configuration."""


class SolverError(AsianUVMError, RuntimeError):
    """A PDE march or linear solve failed."""


class SingularSystemError(SolverError):
    def __init__(self, y_slice: int, level: int | None = None):
        self.y_slice = y_slice
        self.level = level
        where = f" at level {level}" if level is not None else ""
        super().__init__(f"singular tridiagonal x-system on y-slice j={y_slice}{where}")


class NonFiniteError(SolverError):
    def __init__(self, level: int, t: float):
        self.level = level
        self.t = t
        super().__init__(
            f"non-finite values at time level {level} (t={t:.6g}); "
            "the grid/time-step configuration is unstable"
        )


class PolicyIterationError(SolverError):
    def __init__(self, level: int, t: float, residual: float, iters: int):
        self.level = level
        self.t = t
        self.residual = residual
        self.iters = iters
        super().__init__(
            f"policy iteration did not converge at level {level} (t={t:.6g}) "
            f"after {iters} iterations; last relative residual {residual:.3e}"
        )
