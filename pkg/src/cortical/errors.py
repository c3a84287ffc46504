"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes, so every failure a user can trigger
should surface as one of them.
"""


class CorticalError(Exception):
    """Base class for all package errors."""


class GeometryError(CorticalError, ValueError):
    """Invalid grid geometry or mismatched geometries between fields."""


class DomainError(CorticalError, ValueError):
    """A continuous point falls outside the grid's bounding box."""


class DegenerateCoefficientError(CorticalError, ValueError):
    """Random coefficients produced an undefined quantity (e.g. arg of 0)."""


class InstabilityError(CorticalError, ArithmeticError):
    """Explicit time stepping blew up."""

    def __init__(self, iteration: int, update_sum: float):
        self.iteration = iteration
        self.update_sum = update_sum
        super().__init__(
            f"time stepping diverged at iteration {iteration} "
            f"(update sum {update_sum:.3e}); reduce dt"
        )


class ConvergenceError(CorticalError, RuntimeError):
    """An iterative solver exhausted its iteration budget."""


class DegenerateLevelError(CorticalError, ValueError):
    """A level set is empty or collapses to the source cell."""


class ConfigError(CorticalError, ValueError):
    """Malformed experiment configuration."""


class ImageIOError(CorticalError, OSError):
    """An image or data file could not be read or written."""
