"""Analytical cycle-count model of the elimination accelerator.

Three blocks are modelled: whitening (row scaling of the weighted factors),
the partial-QR block with an Evaluate unit pipelined against ``n_u``
time-multiplexed Update units, and the FETCH/PREPARE/SOLVE/WRITE
back-substitution pipeline. This is a throughput model with integer cycle
counts, not a cycle-accurate simulation.
"""

from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from .graph import build_graph, eliminate_parallel_two_front, eliminate_sequential
from .problem import LqrProblem

SEQUENTIAL = "sequential"
TWO_FRONT = "two_front"
BACKSUB_FILL = 3


def _ceil_div(a, b):
    return -(-a // b)


@dataclass(frozen=True)
class PipelineConfig:
    n_u: int = 1
    clock_hz: float = 167e6
    add: int = 3
    mul: int = 6
    div: int = 28
    sqrt: int = 28
    fifo_depth: int = 4

    def __post_init__(self):
        if self.n_u < 1:
            raise ValueError("n_u must be at least 1")
        if min(self.add, self.mul, self.div, self.sqrt) < 1:
            raise ValueError("operator latencies must be at least one cycle")
        if self.fifo_depth < 0:
            raise ValueError("fifo depth cannot be negative")


@dataclass
class LatencyReport:
    schedule: str
    whitening: int
    qr: int
    backsub: int
    total: int
    seconds: float
    breakdown: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def model_whitening(rows, cols, pow2_mode, cfg):
    """Cycles to whiten a ``rows x cols`` factor.

    All entries of a row are scaled in parallel. In power-of-two mode a row
    costs one exponent-add cycle; otherwise rows stream through a pipelined
    multiplier.
    """
    if rows < 1 or cols < 1:
        raise ValueError("whitening dimensions must be positive")
    if pow2_mode:
        return rows
    return rows + cfg.mul - 1


def whitening_speedup(rows, cfg):
    return model_whitening(rows, 1, False, cfg) / model_whitening(rows, 1, True, cfg)


def qr_phases(r, c, k, cfg):
    """Per-column Evaluate and Update cycle counts."""
    if not 1 <= k <= c:
        raise ValueError(f"k={k} out of range for {c} columns")
    if r < 1:
        raise ValueError("need at least one row")
    evals, updates = [], []
    for j in range(k):
        h = max(r - j, 1)
        evals.append(h + cfg.sqrt + cfg.div)
        updates.append(_ceil_div(c - j - 1, cfg.n_u) * (h + cfg.mul + cfg.add))
    return evals, updates


def model_partial_qr(r, c, k, cfg):
    """Cycles to triangularize the first ``k`` columns of an ``r x c`` matrix.

    Update of column j overlaps the Evaluate of column j+1. With no FIFO
    between the units the phases run back to back.
    """
    evals, updates = qr_phases(r, c, k, cfg)
    if cfg.fifo_depth == 0:
        return sum(evals) + sum(updates)
    total = evals[0]
    for j in range(k - 1):
        total += max(updates[j], evals[j + 1])
    return total + updates[-1]


def model_backsub(n, cfg):
    """Cycles for an ``n``-row back substitution.

    Row i needs ``n-1-i`` multiply-accumulates (PREPARE) and one division
    (SOLVE); FETCH and WRITE overlap with compute apart from pipeline fill.
    """
    if n < 1:
        raise ValueError("system size must be positive")
    return sum((n - 1 - i) + cfg.div for i in range(n)) + BACKSUB_FILL


@lru_cache(maxsize=64)
def elimination_shapes(n, m, N, schedule):
    """Stacked-matrix shapes ``(front, rows, cols, k)`` seen by each elimination.

    Obtained by running the real elimination on a unit problem of the given
    dimensions; shapes depend only on the graph structure.
    """
    A = np.eye(n)
    B = np.ones((n, m))
    p = LqrProblem(A, B, np.eye(n), np.eye(m), N, np.ones(n), 10)
    g = build_graph(p)
    if schedule == SEQUENTIAL:
        sys = eliminate_sequential(g)
    elif schedule == TWO_FRONT:
        sys = eliminate_parallel_two_front(g)
    else:
        raise ValueError(f"unknown schedule {schedule!r}")
    steps = sorted(sys.steps, key=lambda s: s.var)
    return tuple((s.front, s.rows, s.cols, s.k) for s in steps)


def weighted_factor_rows(n, N):
    """Row blocks that need whitening: the x_0 prior plus N dynamics factors."""
    return [n] * (N + 1)


def model_solve(dims, schedule, cfg, pow2_mode=True):
    """Latency of one full solve for problem dimensions ``(n, m, N)``."""
    n, m, N = (int(d) for d in dims)
    if min(n, m, N) < 1:
        raise ValueError("problem dimensions must be positive")
    whitening = sum(model_whitening(r, 2 * n + m + 1, pow2_mode, cfg) for r in weighted_factor_rows(n, N))
    per_front = {"main": 0, "left": 0, "right": 0, "middle": 0}
    for front, rows, cols, k in elimination_shapes(n, m, N, schedule):
        per_front[front] += model_partial_qr(rows, cols, k, cfg)
    if schedule == SEQUENTIAL:
        qr = per_front["main"]
        breakdown = {"qr_sequential": qr}
    else:
        qr = max(per_front["left"], per_front["right"]) + per_front["middle"]
        breakdown = {
            "qr_left": per_front["left"],
            "qr_right": per_front["right"],
            "qr_middle": per_front["middle"],
        }
    size = (N + 1) * n + N * m
    backsub = model_backsub(size, cfg)
    total = whitening + qr + backsub
    breakdown.update({"whitening": whitening, "qr": qr, "backsub": backsub, "total": total})
    return LatencyReport(schedule, whitening, qr, backsub, total, total / cfg.clock_hz, breakdown)
