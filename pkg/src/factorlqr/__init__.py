"""LQR solved as a factor graph with soft dynamics constraints.

The dynamics equality of finite-horizon LQR is replaced by a heavily weighted
least-squares factor (weight ``2**e``), which turns the whole problem into a
chain factor graph solved by variable elimination with partial Householder QR.
Riccati and KKT solvers serve as exact references.
"""

from .errors import (
    DimensionError, ExponentRangeError, GraphError, ProblemError,
    ScheduleConflictError, SingularPivotError,
)
from .graph import (
    LqrFactorGraph, TriangularSystem, build_graph, construct_elimination_matrix,
    eliminate_parallel_two_front, eliminate_sequential, eliminate_variable,
    solve_factor_graph, solve_triangular_system, two_front_schedule,
)
from .linalg import (
    HouseholderReflector, back_substitute, householder_evaluate, householder_update,
    partial_qr, scale_rows_pow2,
)
from .problem import LqrProblem, Trajectory, dynamics_residual, trajectory_cost
from .solvers import Variant, solve_kkt_equality, solve_riccati, solve_variant

__version__ = "0.1.0"
