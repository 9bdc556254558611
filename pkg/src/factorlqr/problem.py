"""Finite-horizon LQR problem definition, trajectories and their metrics."""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ProblemError


def _diag_or_raise(name, mat, nonneg=True, strict=False):
    off = mat - np.diag(np.diag(mat))
    if np.any(off != 0):
        raise ProblemError(f"{name} must be diagonal")
    d = np.diag(mat)
    if strict and np.any(d <= 0):
        raise ProblemError(f"{name} must have a strictly positive diagonal")
    if nonneg and np.any(d < 0):
        raise ProblemError(f"{name} must have a nonnegative diagonal")


@dataclass
class LqrProblem:
    """min x_N'Qx_N + sum_k x_k'Qx_k + u_k'Ru_k  s.t.  x_{k+1} = A x_k + B u_k.

    ``weight_exponent`` is the exponent ``e`` of the soft-constraint weight
    ``P = 2**e * I`` used by the factor-graph solvers; it must be even so that
    ``P**0.5`` is itself a power of two.
    """

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    N: int
    x0: np.ndarray
    weight_exponent: int = 10

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        self.Q = _as_weight(self.Q)
        self.R = _as_weight(self.R)
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        n, m = self.n, self.m
        if self.A.shape != (n, n):
            raise ProblemError(f"A must be square, got {self.A.shape}")
        if self.B.shape[0] != n:
            raise ProblemError(f"B has {self.B.shape[0]} rows, expected {n}")
        if self.Q.shape != (n, n):
            raise ProblemError(f"Q must be {n}x{n}, got {self.Q.shape}")
        if self.R.shape != (m, m):
            raise ProblemError(f"R must be {m}x{m}, got {self.R.shape}")
        if self.x0.shape != (n,):
            raise ProblemError(f"x0 must have length {n}, got {self.x0.shape}")
        _diag_or_raise("Q", self.Q)
        _diag_or_raise("R", self.R, strict=True)
        if int(self.N) != self.N or self.N < 1:
            raise ProblemError(f"horizon N must be a positive integer, got {self.N}")
        self.N = int(self.N)
        if int(self.weight_exponent) != self.weight_exponent:
            raise ProblemError("weight_exponent must be an integer")
        self.weight_exponent = int(self.weight_exponent)
        for name in ("A", "B", "Q", "R", "x0"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ProblemError(f"{name} has non-finite entries")

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    def with_x0(self, x0):
        return LqrProblem(self.A, self.B, self.Q, self.R, self.N, x0, self.weight_exponent)

    def with_weight_exponent(self, e):
        return LqrProblem(self.A, self.B, self.Q, self.R, self.N, self.x0, e)


def _as_weight(w):
    w = np.asarray(w, dtype=float)
    if w.ndim <= 1:
        return np.diag(np.atleast_1d(w))
    return w


@dataclass
class Trajectory:
    """States ``x_0..x_N`` (shape (N+1, n)) and controls ``u_0..u_{N-1}`` (shape (N, m))."""

    states: np.ndarray
    controls: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states))
        self.controls = np.atleast_2d(np.asarray(self.controls))
        if self.states.shape[0] != self.controls.shape[0] + 1:
            raise DimensionError(
                f"{self.states.shape[0]} states do not match {self.controls.shape[0]} controls"
            )

    @property
    def N(self):
        return self.controls.shape[0]

    def flat(self):
        return np.concatenate([self.states.ravel(), self.controls.ravel()])


def _check_dims(p, t):
    if t.states.shape != (p.N + 1, p.n) or t.controls.shape != (p.N, p.m):
        raise DimensionError(
            f"trajectory shapes {t.states.shape}/{t.controls.shape} do not match "
            f"problem (N={p.N}, n={p.n}, m={p.m})"
        )


def trajectory_cost(p, t):
    """Quadratic objective including the constant x_0 term."""
    _check_dims(p, t)
    x = t.states.astype(float)
    u = t.controls.astype(float)
    q = np.diag(p.Q)
    r = np.diag(p.R)
    return float(np.sum(x * x * q) + np.sum(u * u * r))


def dynamics_residual(p, t):
    """max_k ||x_{k+1} - (A x_k + B u_k)||_inf."""
    _check_dims(p, t)
    x = t.states.astype(float)
    u = t.controls.astype(float)
    d = x[1:] - (x[:-1] @ p.A.T + u @ p.B.T)
    return float(np.max(np.abs(d)))


def relative_difference(a, b):
    """max|a - b| / max(max|b|, tiny); used to compare trajectories."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    scale = max(np.max(np.abs(b)), 1e-300)
    return float(np.max(np.abs(a - b)) / scale)
