import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from factorlqr.errors import GraphError, ProblemError, ScheduleConflictError, SingularPivotError
from factorlqr.graph import (
    TriangularSystem, TwoFrontSchedule, back_to_front_order, build_graph,
    construct_elimination_matrix, eliminate_parallel_two_front, eliminate_sequential,
    eliminate_variable, front_to_back_order, solve_factor_graph, solve_triangular_system,
    two_front_schedule,
)
from factorlqr.problem import LqrProblem, dynamics_residual, relative_difference
from factorlqr.solvers import kkt_system, random_problem, solve_kkt_equality
from factorlqr.tracking import benchmark_problem


def scalar_problem(N=1, x0=1.0, e=10):
    return LqrProblem(1.0, 1.0, 1.0, 1.0, N, [x0], e)


# -- build_graph ------------------------------------------------------------

def test_graph_counts_horizon_two():
    g = build_graph(benchmark_problem(N=2))
    kinds = [f.kind for f in g.factors.values()]
    assert len(g.variables) == 5
    assert [v.label for v in g.variables] == ["x0", "u0", "x1", "u1", "x2"]
    assert kinds.count("dynamics") == 2
    assert kinds.count("state_cost") + kinds.count("control_cost") == 5
    assert kinds.count("prior") == 1
    assert all(len(f.scope) == 3 for f in g.factors.values() if f.kind == "dynamics")
    g.check_consistency()


def test_dynamics_factor_whitened_blocks():
    g = build_graph(scalar_problem())
    (dyn,) = [f for f in g.factors.values() if f.kind == "dynamics"]
    blocks, rhs = dyn.whitened()
    assert [b.item() for b in blocks] == [-32.0, -32.0, 32.0]
    assert rhs.item() == 0.0
    assert dyn.weight_exponent == 5


def test_zero_horizon_rejected():
    with pytest.raises(ProblemError):
        scalar_problem(N=0)


def test_odd_exponent_rejected():
    with pytest.raises(ProblemError):
        build_graph(scalar_problem(e=9))


def test_prior_anchors_measured_state():
    g = build_graph(scalar_problem(x0=3.0))
    (prior,) = [f for f in g.factors.values() if f.kind == "prior"]
    blocks, rhs = prior.whitened()
    assert blocks[0].item() == 32.0 and rhs.item() == 96.0


# -- construct_elimination_matrix ---------------------------------------------

def test_elimination_matrix_for_last_state():
    g = build_graph(scalar_problem(N=2))
    mat, scope, rhs, fids = construct_elimination_matrix(g, g.state(2))
    assert scope == [4, 2, 3]  # x2, x1, u1
    assert mat.shape == (2, 3)
    assert sorted(g.factors[f].kind for f in fids) == ["dynamics", "state_cost"]
    # x2 column first: dynamics row 32, cost row 1
    assert sorted(mat[:, 0].tolist()) == [1.0, 32.0]


def test_elimination_matrix_for_first_control():
    g = build_graph(scalar_problem(N=2))
    _, scope, _, fids = construct_elimination_matrix(g, g.control(0))
    assert scope == [1, 0, 2]
    assert sorted(g.factors[f].kind for f in fids) == ["control_cost", "dynamics"]


def test_elimination_matrix_includes_fill_in():
    g = build_graph(scalar_problem(N=2))
    sys = TriangularSystem(g.variables)
    eliminate_variable(g, 4, sys)
    eliminate_variable(g, 3, sys)
    _, scope, _, fids = construct_elimination_matrix(g, 2)
    assert g.fill_id(3) in fids
    assert g.factors[g.fill_id(3)].scope == (2,)
    assert scope == [2, 0, 1]


def test_fill_in_values_after_eliminating_x2():
    # hand elimination: rows [32,-32,-32 | 0] and [1,0,0 | 0]; the complement of
    # the x2 column [32, 1] is [1, -32]/sqrt(1025), giving [0, -32, -32]/sqrt(1025)
    g = build_graph(scalar_problem(N=2))
    sys = TriangularSystem(g.variables)
    fill = eliminate_variable(g, 4, sys)
    assert fill.scope == (2, 3)
    coeffs = np.abs(np.concatenate([b.ravel() for b in fill.blocks]))
    np.testing.assert_allclose(coeffs, [32 / np.sqrt(1025)] * 2, rtol=1e-12)
    assert fill.rhs.item() == pytest.approx(0.0, abs=1e-15)
    assert abs(sys.conditionals[4].r.item()) == pytest.approx(np.sqrt(1025), rel=1e-14)


def test_eliminated_variable_cannot_be_reused():
    g = build_graph(scalar_problem())
    sys = TriangularSystem(g.variables)
    eliminate_variable(g, 2, sys)
    with pytest.raises(GraphError):
        construct_elimination_matrix(g, 2)


# -- eliminate_variable -------------------------------------------------------

def test_eliminate_last_state_first_creates_fill_over_x0_u0():
    g = build_graph(scalar_problem())
    fill = eliminate_variable(g, 2, TriangularSystem(g.variables))
    assert fill.scope == (0, 1)
    assert fill.weight_exponent == 0
    g.check_consistency()


def test_last_variable_leaves_no_fill():
    g = build_graph(scalar_problem())
    sys = TriangularSystem(g.variables)
    for v in (2, 1):
        eliminate_variable(g, v, sys)
    assert eliminate_variable(g, 0, sys) is None
    assert not g.factors


def test_graph_conservation_during_elimination():
    p = random_problem(np.random.default_rng(3), n=3, m=2, N=6)
    g = build_graph(p)
    original = set(g.factors)
    sys = TriangularSystem(g.variables)
    for v in back_to_front_order(p.N):
        eliminate_variable(g, v, sys)
        g.check_consistency()
        assert len(g.eliminated) + len(g.remaining()) == 2 * p.N + 1
        live = set(g.factors)
        assert live.isdisjoint(g.consumed)
        assert live | g.consumed == original | g.created_fill
    assert g.consumed == original | g.created_fill


# -- sequential and two-front ------------------------------------------------------

def test_scalar_analytic_solution():
    t = solve_factor_graph(scalar_problem())
    assert t.controls[0, 0] == pytest.approx(-0.5, abs=2e-3)
    assert t.states[1, 0] == pytest.approx(0.5, abs=2e-3)


def test_identity_problem_at_origin_is_exactly_zero():
    p = LqrProblem(np.eye(3), np.eye(3), np.eye(3), np.eye(3), 4, np.zeros(3))
    for mode in ("sequential", "two_front"):
        t = solve_factor_graph(p, mode)
        assert not np.any(t.states) and not np.any(t.controls)


def test_sequential_matches_kkt_within_soft_tolerance():
    p = random_problem(np.random.default_rng(11), n=4, m=2, N=20)
    soft = solve_factor_graph(p)
    hard = solve_kkt_equality(p)
    # leakage is O(2**-e); this instance sits well inside 1%
    assert relative_difference(soft.controls, hard.controls) < 1e-2


def test_order_independence_front_vs_back():
    p = benchmark_problem(N=30)
    a = solve_triangular_system(eliminate_sequential(build_graph(p), back_to_front_order(p.N)))
    b = solve_triangular_system(eliminate_sequential(build_graph(p), front_to_back_order(p.N)))
    assert relative_difference(a.flat(), b.flat()) < 1e-6


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.randoms(use_true_random=False))
def test_order_independence_any_permutation(N, rnd):
    p = random_problem(np.random.default_rng(N), n=3, m=2, N=N)
    order = front_to_back_order(N)
    rnd.shuffle(order)
    ref = solve_factor_graph(p)
    got = solve_triangular_system(eliminate_sequential(build_graph(p), order))
    assert relative_difference(got.flat(), ref.flat()) < 1e-6


def test_bad_order_rejected():
    g = build_graph(scalar_problem())
    with pytest.raises(GraphError):
        eliminate_sequential(g, [0, 1])


@pytest.mark.parametrize("N, middle", [(1, 0), (2, 2), (3, 2), (10, 10), (11, 10)])
def test_two_front_schedule_partition(N, middle):
    s = two_front_schedule(N)
    assert s.middle == middle
    assert list(s.left) == sorted(s.left)
    assert list(s.right) == sorted(s.right, reverse=True)
    assert sorted(s.left + s.right + (s.middle,)) == list(range(2 * N + 1))


def test_two_front_matches_sequential_n50():
    p = benchmark_problem(N=50)
    seq = solve_factor_graph(p, "sequential")
    par = solve_factor_graph(p, "two_front")
    assert relative_difference(par.flat(), seq.flat()) <= 1e-6


def test_two_front_degenerate_horizon_one():
    p = scalar_problem()
    g = build_graph(p)
    sys = eliminate_parallel_two_front(g)
    assert sys.order[-1] == 0
    assert set(sys.order) == {0, 1, 2}
    t = solve_triangular_system(sys)
    assert t.controls[0, 0] == pytest.approx(-0.5, abs=2e-3)


def test_two_front_touched_factor_sets_disjoint():
    p = random_problem(np.random.default_rng(5), n=4, m=2, N=10)
    g = build_graph(p)
    sys = eliminate_parallel_two_front(g)
    assert sys.touched["left"] and sys.touched["right"]
    assert sys.touched["left"].isdisjoint(sys.touched["right"])
    fronts = {s.var: s.front for s in sys.steps}
    sched = two_front_schedule(10)
    assert all(fronts[v] == "left" for v in sched.left)
    assert all(fronts[v] == "right" for v in sched.right)
    assert fronts[sched.middle] == "middle"
    assert sys.order[-1] == sched.middle


def test_two_front_conflict_detected():
    # meeting at a control: both neighbouring states share its dynamics factor
    p = scalar_problem(N=3)
    bad = TwoFrontSchedule((0, 1, 2), (6, 5, 4), 3)
    with pytest.raises(ScheduleConflictError):
        eliminate_parallel_two_front(build_graph(p), bad)


def test_triangular_system_dense_form_is_upper_triangular():
    p = random_problem(np.random.default_rng(8), n=3, m=1, N=5)
    sys = eliminate_parallel_two_front(build_graph(p))
    r, rhs, order = sys.to_dense()
    assert np.all(np.tril(r, -1) == 0.0)
    x = np.linalg.solve(r, rhs)
    t = solve_triangular_system(sys)
    sol = {}
    pos = 0
    for v in order:
        d = sys.variables[v].dim
        sol[v] = x[pos:pos + d]
        pos += d
    np.testing.assert_allclose(sol[0], t.states[0], rtol=1e-10)
    np.testing.assert_allclose(sol[1], t.controls[0], rtol=1e-10)


def test_zero_weights_give_singular_pivot():
    # zero control cost and no dynamics weight on u: u column is empty
    p = LqrProblem(1.0, 0.0, 1.0, 1.0, 1, [1.0])
    p.R = np.zeros((1, 1))
    with pytest.raises(SingularPivotError):
        solve_factor_graph(p)


def test_incomplete_system_rejected():
    g = build_graph(scalar_problem())
    sys = TriangularSystem(g.variables)
    eliminate_variable(g, 2, sys)
    with pytest.raises(GraphError):
        solve_triangular_system(sys)


# -- soft-constraint behaviour --------------------------------------------------------

def _dynamics_multipliers(p):
    K, rhs = kkt_system(p)
    sol = np.linalg.solve(K, rhs)
    nz = (p.N + 1) * p.n + p.N * p.m
    return sol[nz + p.n:]


def test_residual_tracks_multiplier_over_weight():
    # soft optimum satisfies 2P d_k ~ lambda_k, so max|d| -> max|lambda| / 2P
    p = benchmark_problem(N=50)
    lam = np.max(np.abs(_dynamics_multipliers(p)))
    for e in (10, 20):
        q = p.with_weight_exponent(e)
        res = dynamics_residual(q, solve_factor_graph(q))
        assert 0 < res <= lam / 2 ** (e + 1)
    assert res * 2 ** 21 / lam == pytest.approx(1.0, rel=0.01)


def test_soft_error_non_increasing_in_weight():
    p = random_problem(np.random.default_rng(21), n=5, m=2, N=30)
    hard = solve_kkt_equality(p)
    errs = []
    for e in (6, 8, 10, 12):
        q = p.with_weight_exponent(e)
        errs.append(np.max(np.abs(solve_factor_graph(q).controls - hard.controls)))
    assert all(b <= a for a, b in zip(errs, errs[1:]))


def test_float32_mode_close_to_float64():
    p = random_problem(np.random.default_rng(4), n=5, m=2, N=20)
    t64 = solve_factor_graph(p)
    t32 = solve_factor_graph(p, dtype=np.float32)
    assert t32.states.dtype == np.float32
    assert relative_difference(t32.flat(), t64.flat()) < 1e-4


def _dense_soft_solution(p):
    """Minimise the whitened soft objective with a dense least-squares solve."""
    n, m, N = p.n, p.m, p.N
    w = 2.0 ** (p.weight_exponent / 2)
    nx = (N + 1) * n
    nz = nx + N * m
    blocks, rhs = [], []
    prior = np.zeros((n, nz))
    prior[:, :n] = w * np.eye(n)
    blocks.append(prior)
    rhs.append(w * p.x0)
    cost = np.zeros((nz, nz))
    cost[:nx, :nx] = np.kron(np.eye(N + 1), np.sqrt(p.Q))
    cost[nx:, nx:] = np.kron(np.eye(N), np.sqrt(p.R))
    blocks.append(cost)
    rhs.append(np.zeros(nz))
    for k in range(N):
        d = np.zeros((n, nz))
        d[:, (k + 1) * n:(k + 2) * n] = np.eye(n)
        d[:, k * n:(k + 1) * n] = -p.A
        d[:, nx + k * m:nx + (k + 1) * m] = -p.B
        blocks.append(w * d)
        rhs.append(np.zeros(n))
    z = np.linalg.lstsq(np.vstack(blocks), np.concatenate(rhs), rcond=None)[0]
    return z


@pytest.mark.parametrize("make", [lambda: benchmark_problem(N=50),
                                  lambda: random_problem(np.random.default_rng(12), n=5, m=2, N=30)])
@pytest.mark.parametrize("mode", ["sequential", "two_front"])
def test_matches_dense_soft_least_squares(make, mode):
    p = make()
    t = solve_factor_graph(p, mode)
    assert relative_difference(t.flat(), _dense_soft_solution(p)) < 1e-10
