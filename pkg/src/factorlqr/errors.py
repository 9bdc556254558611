"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Operand shapes do not line up."""


class SingularPivotError(ArithmeticError):
    """A diagonal entry of a triangular system is zero or too small to divide by."""

    def __init__(self, row, value):
        super().__init__(f"singular pivot at row {row}: |{value!r}| below threshold")
        self.row = row
        self.value = value


class ExponentRangeError(ArithmeticError):
    """Power-of-two scaling left (or started outside) the normal floating range."""


class ProblemError(ValueError):
    """An LQR problem definition is inconsistent."""


class GraphError(RuntimeError):
    """The factor graph is structurally inconsistent."""


class ScheduleConflictError(GraphError, AssertionError):
    """Two elimination fronts tried to claim the same factor."""
