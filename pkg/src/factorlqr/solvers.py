"""Reference LQR solvers and the four-variant interface.

``trad``      backward Riccati recursion with exact rollout
``equcons``   equality-constrained QP solved through its dense KKT system
``sequ``      soft-constrained factor graph, sequential elimination
``parallel``  soft-constrained factor graph, two-front elimination
"""

import enum
import time
from dataclasses import dataclass

import numpy as np

from .errors import ProblemError
from .graph import solve_factor_graph
from .problem import LqrProblem, Trajectory, dynamics_residual, trajectory_cost


class Variant(str, enum.Enum):
    TRAD = "trad"
    EQUCONS = "equcons"
    SEQU = "sequ"
    PARALLEL = "parallel"


VARIANTS = tuple(Variant)


@dataclass
class RiccatiSolution:
    gains: np.ndarray  # (N, m, n)
    value: np.ndarray  # (N+1, n, n)
    trajectory: Trajectory


def solve_riccati(p, dtype=np.float64, psd_tol=1e-9):
    """Finite-horizon discrete Riccati recursion followed by a forward rollout."""
    A, B, Q, R = (np.asarray(a, dtype=dtype) for a in (p.A, p.B, p.Q, p.R))
    n, m, N = p.n, p.m, p.N
    P = np.empty((N + 1, n, n), dtype=dtype)
    K = np.empty((N, m, n), dtype=dtype)
    P[N] = Q
    for k in range(N - 1, -1, -1):
        Pn = P[k + 1]
        S = R + B.T @ Pn @ B
        try:
            K[k] = np.linalg.solve(S, B.T @ Pn @ A)
        except np.linalg.LinAlgError as err:
            raise ProblemError(f"singular control Hessian at step {k}") from err
        Acl = A - B @ K[k]
        Pk = Q + K[k].T @ R @ K[k] + Acl.T @ Pn @ Acl
        P[k] = 0.5 * (Pk + Pk.T)
        # float noise scales with the magnitude of P
        floor = -psd_tol * max(1.0, float(np.max(np.abs(P[k]))))
        if np.linalg.eigvalsh(P[k].astype(float)).min() < floor:
            raise ProblemError(f"value matrix at step {k} lost positive semidefiniteness")

    x = np.empty((N + 1, n), dtype=dtype)
    u = np.empty((N, m), dtype=dtype)
    x[0] = p.x0
    for k in range(N):
        u[k] = -K[k] @ x[k]
        x[k + 1] = A @ x[k] + B @ u[k]
    return RiccatiSolution(K, P, Trajectory(x, u))


def kkt_system(p):
    """Dense KKT matrix and rhs for min z'Hz s.t. Cz = c.

    ``z`` stacks ``x_0..x_N`` then ``u_0..u_{N-1}``; the constraints are
    ``x_0 = x0`` and the dynamics for every step.
    """
    n, m, N = p.n, p.m, p.N
    nx = (N + 1) * n
    nz = nx + N * m
    nc = (N + 1) * n
    H = np.zeros((nz, nz))
    for k in range(N + 1):
        H[k * n:(k + 1) * n, k * n:(k + 1) * n] = p.Q
    for k in range(N):
        o = nx + k * m
        H[o:o + m, o:o + m] = p.R
    C = np.zeros((nc, nz))
    c = np.zeros(nc)
    C[:n, :n] = np.eye(n)
    c[:n] = p.x0
    for k in range(N):
        r = (k + 1) * n
        C[r:r + n, (k + 1) * n:(k + 2) * n] = np.eye(n)
        C[r:r + n, k * n:(k + 1) * n] = -p.A
        C[r:r + n, nx + k * m:nx + (k + 1) * m] = -p.B
    K = np.block([[2.0 * H, C.T], [C, np.zeros((nc, nc))]])
    rhs = np.concatenate([np.zeros(nz), c])
    return K, rhs


def solve_kkt_equality(p, dtype=np.float64):
    """Exact-dynamics optimum from the stacked KKT conditions."""
    K, rhs = kkt_system(p)
    try:
        sol = np.linalg.solve(K.astype(dtype), rhs.astype(dtype))
    except np.linalg.LinAlgError as err:
        raise ProblemError("singular KKT matrix") from err
    n, m, N = p.n, p.m, p.N
    nx = (N + 1) * n
    return Trajectory(sol[:nx].reshape(N + 1, n), sol[nx:nx + N * m].reshape(N, m))


def solve_variant(p, variant, dtype=np.float64):
    """Solve ``p`` with one of the four variants; returns ``(trajectory, diagnostics)``."""
    variant = Variant(variant)
    t0 = time.perf_counter()
    if variant is Variant.TRAD:
        traj = solve_riccati(p, dtype).trajectory
    elif variant is Variant.EQUCONS:
        traj = solve_kkt_equality(p, dtype)
    elif variant is Variant.SEQU:
        traj = solve_factor_graph(p, "sequential", dtype=dtype)
    else:
        traj = solve_factor_graph(p, "two_front", dtype=dtype)
    elapsed = time.perf_counter() - t0
    diag = {
        "variant": variant.value,
        "cost": trajectory_cost(p, traj),
        "dynamics_residual": dynamics_residual(p, traj),
        "wall_time_s": elapsed,
    }
    return traj, diag


def is_controllable(A, B, tol=1e-9):
    n = A.shape[0]
    blocks, M = [], B
    for _ in range(n):
        blocks.append(M)
        M = A @ M
    s = np.linalg.svd(np.hstack(blocks), compute_uv=False)
    return s[-1] > tol * s[0] if s.size >= n else False


def random_problem(rng, n=None, m=None, N=None, weight_exponent=10, max_radius=1.1):
    """Random controllable problem with Q = I, R = I.

    ``A`` is rescaled so its spectral radius lies in ``[0.5, max_radius]``.
    """
    n = n or int(rng.integers(1, 6))
    m = m or int(rng.integers(1, min(n, 2) + 1))
    N = N or int(rng.integers(1, 51))
    while True:
        A = rng.standard_normal((n, n))
        rho = max(abs(np.linalg.eigvals(A)))
        if rho > 0:
            A *= rng.uniform(0.5, max_radius) / rho
        B = rng.standard_normal((n, m))
        if is_controllable(A, B):
            break
    x0 = rng.standard_normal(n)
    return LqrProblem(A, B, np.eye(n), np.eye(m), N, x0, weight_exponent)
