"""Dense kernels used by the elimination solver.

Householder reflections are split into an Evaluate step (build the reflector
from a column) and an Update step (apply it to a block), mirroring how the
hardware pipelines them. All routines work on numpy arrays and honour the
input dtype, so float32 and float64 runs go through the same code.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ExponentRangeError, SingularPivotError

PIVOT_FLOOR = 1e-300

# (unsigned view, mantissa bits, exponent field max) per supported float type
_FLOAT_LAYOUT = {
    np.dtype(np.float64): (np.uint64, 52, 0x7FF),
    np.dtype(np.float32): (np.uint32, 23, 0xFF),
}


@dataclass(frozen=True)
class HouseholderReflector:
    """H = I - beta * v v^T with ``v`` of unit 2-norm.

    ``beta`` is 2 for a proper reflection and 0 for the identity (degenerate
    zero column). ``pivot_value`` is the first entry of H @ column.
    """

    v: np.ndarray
    beta: float
    pivot_value: float

    @property
    def size(self):
        return self.v.shape[0]

    def as_matrix(self):
        return np.eye(self.size, dtype=self.v.dtype) - self.beta * np.outer(self.v, self.v)


def as_matrix(data, dtype=None):
    """Coerce to a finite 2-D float array."""
    m = np.array(data, dtype=dtype if dtype is not None else np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1) if m.size else m.reshape(0, 0)
    if m.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix entries must be finite")
    return m


def householder_evaluate(column):
    """Build the reflector that maps ``column`` onto a multiple of e1.

    The pivot is ``-sign(column[0]) * ||column||`` (sign(0) taken as +1),
    which avoids cancellation when forming ``v``.
    """
    x = np.asarray(column)
    if x.ndim != 1 or x.shape[0] < 1:
        raise DimensionError("householder_evaluate needs a non-empty vector")
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    scale = np.max(np.abs(x))
    if scale == 0.0:
        e1 = np.zeros_like(x)
        e1[0] = 1.0
        return HouseholderReflector(e1, 0.0, x.dtype.type(0.0))
    # normalise first so squaring tiny or huge entries cannot under/overflow
    xs = x / scale
    sign = 1.0 if x[0] >= 0 else -1.0
    unit_pivot = -sign * np.linalg.norm(xs)
    v = xs.copy()
    v[0] -= unit_pivot
    v /= np.linalg.norm(v)
    return HouseholderReflector(v, 2.0, x.dtype.type(unit_pivot * scale))


def householder_update(reflector, block):
    """Return H @ block without forming H."""
    b = np.asarray(block)
    if b.ndim == 1:
        b = b.reshape(-1, 1)
    if b.shape[0] != reflector.size:
        raise DimensionError(
            f"reflector of size {reflector.size} cannot act on {b.shape[0]} rows"
        )
    if reflector.beta == 0.0:
        return b.copy()
    v = reflector.v.astype(b.dtype, copy=False)
    return b - (reflector.beta * v)[:, None] * (v @ b)[None, :]


def partial_qr(m, k):
    """Triangularize the first ``k`` columns of ``m`` with Householder steps.

    Returns ``(top, remainder)``: ``top`` holds the first ``min(k, rows)``
    rows of the transformed matrix, ``remainder`` the rest, whose first ``k``
    columns are exactly zero. Columns whose sub-diagonal part is already zero
    are left untouched, so an upper-triangular input comes back unchanged.
    """
    src = np.asarray(m)
    w = np.array(src, dtype=src.dtype if src.dtype in _FLOAT_LAYOUT else np.float64)
    if w.ndim != 2 or w.shape[0] < 1:
        raise DimensionError(f"partial_qr needs a matrix with at least one row, got {w.shape}")
    rows, cols = w.shape
    if not 1 <= k <= cols:
        raise DimensionError(f"k={k} out of range for {cols} columns")

    steps = min(k, rows)
    for j in range(steps):
        col = w[j:, j]
        if not np.any(col[1:]):
            continue
        h = householder_evaluate(col)
        w[j:, j + 1:] = householder_update(h, w[j:, j + 1:])
        w[j, j] = h.pivot_value
        w[j + 1:, j] = 0.0
    # below-diagonal zeros of skipped columns are already exact
    return w[:steps].copy(), w[steps:].copy()


def back_substitute(r, b):
    """Solve the upper-triangular system ``r @ x = b``.

    Rows are processed last to first: the right-hand side is reduced by the
    already-solved entries, then divided by the diagonal.
    """
    r = np.asarray(r)
    b = np.asarray(b)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise DimensionError(f"back_substitute needs a square matrix, got {r.shape}")
    n = r.shape[0]
    if b.shape != (n,):
        raise DimensionError(f"rhs of shape {b.shape} does not match dimension {n}")
    dtype = np.result_type(r.dtype, b.dtype, np.float32)
    x = np.zeros(n, dtype=dtype)
    for i in range(n - 1, -1, -1):
        pivot = r[i, i]
        if not abs(pivot) > PIVOT_FLOOR:
            raise SingularPivotError(i, pivot)
        acc = b[i] - r[i, i + 1:] @ x[i + 1:]
        x[i] = acc / pivot
    return x


def scale_rows_pow2(m, e):
    """Multiply every entry by ``2**e`` by adding ``e`` to the exponent field.

    Only zeros and normal numbers are accepted; a result that would overflow
    or fall out of the normal range raises ``ExponentRangeError``.
    """
    scalar = np.ndim(m) == 0
    a = np.asarray(m)
    if not np.issubdtype(a.dtype, np.floating):
        a = a.astype(np.float64)
    e = int(e)
    if e == 0:
        out = a.copy()
        return out[()] if scalar else out
    try:
        utype, mant_bits, exp_max = _FLOAT_LAYOUT[a.dtype]
    except KeyError:
        raise TypeError(f"unsupported dtype {a.dtype}") from None

    bits = np.ascontiguousarray(a).view(utype)
    shift = utype(mant_bits)
    exp_mask = utype(exp_max) << shift
    exponent = ((bits & exp_mask) >> shift).astype(np.int64)
    magnitude = bits & ~(utype(1) << utype(8 * a.dtype.itemsize - 1))
    nonzero = magnitude != 0

    if np.any(exponent == exp_max):
        raise ExponentRangeError("non-finite input to scale_rows_pow2")
    if np.any(nonzero & (exponent == 0)):
        raise ExponentRangeError("subnormal input to scale_rows_pow2")
    new_exp = exponent + e
    if np.any(nonzero & (new_exp >= exp_max)):
        raise ExponentRangeError(f"scaling by 2**{e} overflows")
    if np.any(nonzero & (new_exp <= 0)):
        raise ExponentRangeError(f"scaling by 2**{e} leaves the normal range")

    new_exp = np.where(nonzero, new_exp, 0).astype(utype)
    out_bits = (bits & ~exp_mask) | (new_exp << shift)
    out = out_bits.view(a.dtype).reshape(a.shape)
    return out[()] if scalar else out
