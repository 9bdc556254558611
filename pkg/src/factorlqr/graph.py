"""LQR as a chain factor graph, solved by variable elimination.

Variables are laid out in chain order ``x_0, u_0, x_1, ..., u_{N-1}, x_N`` and
a variable's id is its chain position (``x_k -> 2k``, ``u_k -> 2k+1``).

Every term of the objective is a linear least-squares factor. The dynamics
equality is replaced by a ternary factor with weight ``P = 2**e * I``; its
square root ``2**(e/2)`` is applied by exponent addition when the elimination
matrix is assembled. Eliminating a variable stacks its adjacent factors,
triangularizes the variable's columns with a partial Householder QR, keeps the
top rows as a block row of R and re-inserts the remaining rows as a new
(fill-in) factor on the variable's neighbours.
"""

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import GraphError, ProblemError, ScheduleConflictError, SingularPivotError
from .linalg import back_substitute, partial_qr, scale_rows_pow2
from .problem import Trajectory

STATE = "x"
CONTROL = "u"


@dataclass(frozen=True)
class VariableNode:
    id: int
    kind: str
    time: int
    dim: int

    @property
    def label(self):
        return f"{self.kind}{self.time}"


@dataclass
class Factor:
    """Least-squares term ``|| 2**w * (sum_j blocks[j] @ x_scope[j] - rhs) ||^2``.

    ``w`` is ``weight_exponent``; fill-in factors are already whitened and
    carry ``w = 0``.
    """

    scope: tuple
    blocks: tuple
    rhs: np.ndarray
    weight_exponent: int = 0
    kind: str = "cost"

    def __post_init__(self):
        if len(set(self.scope)) != len(self.scope):
            raise GraphError(f"duplicate variables in factor scope {self.scope}")
        if len(self.blocks) != len(self.scope):
            raise GraphError("one coefficient block per scope variable is required")
        rows = self.rhs.shape[0]
        for b in self.blocks:
            if b.ndim != 2 or b.shape[0] != rows:
                raise GraphError(f"block of shape {b.shape} does not match {rows} rhs rows")

    @property
    def rows(self):
        return self.rhs.shape[0]

    def whitened(self):
        e = self.weight_exponent
        if e == 0:
            return self.blocks, self.rhs
        return tuple(scale_rows_pow2(b, e) for b in self.blocks), scale_rows_pow2(self.rhs, e)


@dataclass
class Conditional:
    """One block row of R: ``R_vv x_v + sum_p S_p x_p = d``."""

    var: int
    r: np.ndarray
    parents: tuple
    s: tuple
    d: np.ndarray


@dataclass
class EliminationStep:
    var: int
    factors: tuple
    rows: int
    cols: int
    k: int
    front: str = "main"


@dataclass
class TriangularSystem:
    """Block upper-triangular system produced by elimination.

    ``order`` is the elimination sequence as it actually happened (for the
    two-front schedule this is the thread interleaving); ``conditionals`` is
    keyed by variable id.
    """

    variables: list
    conditionals: dict = field(default_factory=dict)
    order: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    touched: dict = field(default_factory=dict)

    def add(self, cond, step):
        self.conditionals[cond.var] = cond
        self.order.append(cond.var)
        self.steps.append(step)

    def is_complete(self):
        return len(self.conditionals) == len(self.variables)

    def to_dense(self, order=None):
        """Assemble the full R and rhs with columns in elimination order."""
        order = list(self.order if order is None else order)
        offsets, pos = {}, 0
        for v in order:
            offsets[v] = pos
            pos += self.variables[v].dim
        r = np.zeros((pos, pos))
        rhs = np.zeros(pos)
        for v in order:
            c = self.conditionals[v]
            o = offsets[v]
            rows = c.r.shape[0]
            r[o:o + rows, o:o + c.r.shape[1]] = c.r
            for p, s in zip(c.parents, c.s):
                r[o:o + rows, offsets[p]:offsets[p] + s.shape[1]] = s
            rhs[o:o + rows] = c.d
        return r, rhs, order


class LqrFactorGraph:
    """Bipartite graph of variable nodes and factors for one LQR problem."""

    def __init__(self, N, n, m, dtype=np.float64):
        self.N, self.n, self.m = N, n, m
        self.dtype = np.dtype(dtype)
        self.variables = []
        for k in range(N + 1):
            self.variables.append(VariableNode(2 * k, STATE, k, n))
            if k < N:
                self.variables.append(VariableNode(2 * k + 1, CONTROL, k, m))
        self.factors = {}
        self.adjacency = {v.id: set() for v in self.variables}
        self.eliminated = set()
        self.consumed = set()
        self.created_fill = set()
        self._next_id = 0
        self._fill_base = None
        self._lock = threading.RLock()

    # -- construction -----------------------------------------------------
    def add_factor(self, factor, fid=None):
        with self._lock:
            for v in factor.scope:
                if v not in self.adjacency or v in self.eliminated:
                    raise GraphError(f"factor references unknown or eliminated variable {v}")
            if fid is None:
                fid = self._next_id
                self._next_id += 1
            if fid in self.factors or fid in self.consumed:
                raise GraphError(f"factor id {fid} already used")
            self.factors[fid] = factor
            for v in factor.scope:
                self.adjacency[v].add(fid)
            return fid

    def freeze(self):
        """Mark the end of original factors; fill-in ids are derived from the eliminated variable."""
        self._fill_base = self._next_id

    def fill_id(self, var):
        return self._fill_base + var

    # -- queries ----------------------------------------------------------
    def state(self, k):
        return 2 * k

    def control(self, k):
        return 2 * k + 1

    def remaining(self):
        return [v.id for v in self.variables if v.id not in self.eliminated]

    def check_consistency(self):
        for fid, f in self.factors.items():
            for v in f.scope:
                if fid not in self.adjacency[v]:
                    raise GraphError(f"adjacency of {v} misses factor {fid}")
        for v, fids in self.adjacency.items():
            for fid in fids:
                if fid not in self.factors or v not in self.factors[fid].scope:
                    raise GraphError(f"stale adjacency {v} -> {fid}")
        if len(self.eliminated) + len(self.remaining()) != len(self.variables):
            raise GraphError("variable bookkeeping out of sync")


def _sqrt_diag(w):
    return np.diag(np.sqrt(np.diag(w)))


def build_graph(p, dtype=np.float64):
    """Factor graph of the soft-constrained problem.

    Factors, in id order: one prior anchoring ``x_0`` to the measured state
    (same weight as the dynamics), the ternary dynamics factors
    ``x_{k+1} - A x_k - B u_k = 0``, then unary ``Q**0.5 x_k`` and
    ``R**0.5 u_k`` cost factors.
    """
    e = p.weight_exponent
    if e % 2:
        raise ProblemError(f"weight exponent must be even, got {e}")
    half = e // 2
    n, m, N = p.n, p.m, p.N
    g = LqrFactorGraph(N, n, m, dtype)
    A = p.A.astype(dtype)
    B = p.B.astype(dtype)
    eye = np.eye(n, dtype=dtype)
    zero_n = np.zeros(n, dtype=dtype)

    g.add_factor(Factor((0,), (eye.copy(),), p.x0.astype(dtype), half, "prior"))
    for k in range(N):
        g.add_factor(Factor(
            (g.state(k), g.control(k), g.state(k + 1)),
            (-A, -B, eye.copy()),
            zero_n.copy(), half, "dynamics",
        ))
    qh = _sqrt_diag(p.Q).astype(dtype)
    rh = _sqrt_diag(p.R).astype(dtype)
    for k in range(N + 1):
        g.add_factor(Factor((g.state(k),), (qh.copy(),), zero_n.copy(), 0, "state_cost"))
        if k < N:
            g.add_factor(Factor((g.control(k),), (rh.copy(),), np.zeros(m, dtype=dtype), 0, "control_cost"))
    g.freeze()
    return g


def construct_elimination_matrix(g, v):
    """Stack the whitened factors adjacent to ``v``.

    Returns ``(matrix, scope, rhs, factor_ids)``; columns are ordered with
    ``v`` first and the other variables in chain order.
    """
    with g._lock:
        if v in g.eliminated:
            raise GraphError(f"variable {v} already eliminated")
        fids = sorted(g.adjacency[v])
        if not fids:
            raise GraphError(f"variable {v} has no adjacent factors")
        factors = [g.factors[f] for f in fids]
    others = sorted({u for f in factors for u in f.scope if u != v})
    scope = [v] + others
    offsets, pos = {}, 0
    for u in scope:
        offsets[u] = pos
        pos += g.variables[u].dim
    rows = sum(f.rows for f in factors)
    mat = np.zeros((rows, pos), dtype=g.dtype)
    rhs = np.zeros(rows, dtype=g.dtype)
    r0 = 0
    for f in factors:
        blocks, b = f.whitened()
        for u, blk in zip(f.scope, blocks):
            mat[r0:r0 + f.rows, offsets[u]:offsets[u] + blk.shape[1]] = blk
        rhs[r0:r0 + f.rows] = b
        r0 += f.rows
    return mat, scope, rhs, tuple(fids)


def _compress(rem, ncols):
    """Reduce a fill-in block to at most ``ncols`` informative rows.

    Continues the Householder sweep on the remainder; rows whose coefficient
    part ends up zero only carry a constant and are dropped.
    """
    if rem.shape[0] > ncols and ncols > 0:
        top, _ = partial_qr(rem, ncols)
        rem = top
    keep = np.any(rem[:, :ncols] != 0, axis=1)
    return rem[keep]


def eliminate_variable(g, v, sys, front="main", claims=None):
    """Eliminate ``v``: append its block row to ``sys`` and re-insert the fill-in."""
    mat, scope, rhs, fids = construct_elimination_matrix(g, v)
    if claims is not None:
        claims(front, fids)
    k = g.variables[v].dim
    aug = np.hstack([mat, rhs[:, None]])
    top, rem = partial_qr(aug, k)

    parents = tuple(scope[1:])
    s_blocks, c = [], k
    for u in parents:
        d = g.variables[u].dim
        s_blocks.append(top[:, c:c + d])
        c += d
    cond = Conditional(v, top[:, :k], parents, tuple(s_blocks), top[:, -1])

    fill = None
    ncols = aug.shape[1] - 1 - k
    if parents and rem.shape[0]:
        rem = _compress(rem[:, k:], ncols)
        if rem.shape[0]:
            blocks, c = [], 0
            for u in parents:
                d = g.variables[u].dim
                blocks.append(rem[:, c:c + d])
                c += d
            fill = Factor(parents, tuple(blocks), rem[:, -1].copy(), 0, "fill")

    with g._lock:
        for fid in fids:
            f = g.factors.pop(fid)
            for u in f.scope:
                g.adjacency[u].discard(fid)
            g.consumed.add(fid)
        g.eliminated.add(v)
        if fill is not None:
            fid = g.fill_id(v)
            g.add_factor(fill, fid)
            g.created_fill.add(fid)
            if claims is not None:
                claims(front, (fid,))
        sys.add(cond, EliminationStep(v, fids, aug.shape[0], aug.shape[1], k, front))
    return fill


def back_to_front_order(N):
    return list(range(2 * N, -1, -1))


def front_to_back_order(N):
    return list(range(2 * N + 1))


def eliminate_sequential(g, order=None):
    """Eliminate every variable in ``order`` (default: newest to oldest)."""
    if order is None:
        order = back_to_front_order(g.N)
    order = list(order)
    if sorted(order) != sorted(g.remaining()):
        raise GraphError("elimination order must be a permutation of the remaining variables")
    sys = TriangularSystem(g.variables)
    for v in order:
        eliminate_variable(g, v, sys)
    return sys


@dataclass(frozen=True)
class TwoFrontSchedule:
    left: tuple
    right: tuple
    middle: int


def two_front_schedule(N):
    """Split the chain into an ascending left front and descending right front.

    The meeting point is chain position ``N`` when that is a state. For odd
    ``N`` position ``N`` is a control whose dynamics factor also touches both
    neighbouring states, so the meeting point moves to the state at ``N-1``.
    """
    if N < 1:
        raise ProblemError("horizon must be at least 1")
    middle = N if N % 2 == 0 else N - 1
    return TwoFrontSchedule(tuple(range(middle)), tuple(range(2 * N, middle, -1)), middle)


def eliminate_parallel_two_front(g, schedule=None):
    """Eliminate both ends of the chain concurrently, then the middle variable.

    Each front runs on its own worker thread and only touches factors reachable
    from its own frontier; every factor a front selects is registered, and a
    factor claimed by both fronts raises ``ScheduleConflictError``.
    """
    sched = schedule or two_front_schedule(g.N)
    if len(g.eliminated):
        raise GraphError("two-front elimination expects a fresh graph")
    owner = {}
    touched = {"left": set(), "right": set()}
    claim_lock = threading.Lock()

    def claim(front, fids):
        with claim_lock:
            for fid in fids:
                other = owner.setdefault(fid, front)
                if other != front:
                    raise ScheduleConflictError(
                        f"factor {fid} selected by both {other} and {front} fronts"
                    )
                touched[front].add(fid)

    sys = TriangularSystem(g.variables)

    def run(front, vars_):
        for v in vars_:
            eliminate_variable(g, v, sys, front, claim)

    with ThreadPoolExecutor(max_workers=2) as pool:
        futures = [pool.submit(run, "left", sched.left), pool.submit(run, "right", sched.right)]
        for fut in futures:
            fut.result()
    # barrier passed
    if touched["left"] & touched["right"]:
        raise ScheduleConflictError("fronts touched a shared factor")
    sys.conditionals = dict(sorted(sys.conditionals.items()))
    eliminate_variable(g, sched.middle, sys, "middle")
    sys.touched = {k: frozenset(v) for k, v in touched.items()}
    return sys


def solve_triangular_system(sys):
    """Back-substitute block rows from the last eliminated variable outward."""
    if not sys.is_complete():
        raise GraphError("triangular system is missing variables")
    values = {}
    for v in reversed(sys.order):
        c = sys.conditionals[v]
        if c.r.shape[0] != c.r.shape[1]:
            raise SingularPivotError(v, 0.0)
        rhs = c.d.copy()
        for p, s in zip(c.parents, c.s):
            rhs = rhs - s @ values[p]
        try:
            values[v] = back_substitute(c.r, rhs)
        except SingularPivotError as err:
            raise SingularPivotError(f"{sys.variables[v].label}[{err.row}]", err.value) from None
    states = np.array([values[v.id] for v in sys.variables if v.kind == STATE])
    controls = np.array([values[v.id] for v in sys.variables if v.kind == CONTROL])
    return Trajectory(states, controls)


def solve_factor_graph(p, mode="sequential", order=None, dtype=np.float64):
    """Build, eliminate and back-substitute in one call."""
    g = build_graph(p, dtype)
    if mode == "sequential":
        sys = eliminate_sequential(g, order)
    elif mode == "two_front":
        sys = eliminate_parallel_two_front(g)
    else:
        raise ValueError(f"unknown elimination mode {mode!r}")
    return solve_triangular_system(sys)
