import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psf.convex_solver import (
    FEAS_TOL,
    ConvexProgram,
    QCQPSolver,
    QuadConstraint,
    Status,
    solve_lp,
    solve_qcqp,
)
from psf.errors import Infeasible

cp = pytest.importorskip("cvxpy")


def random_qcqp(rng, n=6, ml=8):
    L = rng.normal(size=(n, n))
    H = L @ L.T + 0.1 * np.eye(n)
    g = rng.normal(size=n)
    G = rng.normal(size=(ml, n))
    h = rng.uniform(0.5, 2.0, ml)
    Lq = rng.normal(size=(n, n))
    Hq = Lq @ Lq.T
    gq = 0.1 * rng.normal(size=n)
    cq = -rng.uniform(0.5, 3.0)
    return ConvexProgram(H, g, 0.0, None, None, G, h, (QuadConstraint(Hq, gq, cq),))


def cvxpy_solve(prog):
    x = cp.Variable(prog.n)
    cons = []
    if prog.b_in.size:
        cons.append(prog.A_in @ x <= prog.b_in)
    if prog.b_eq.size:
        cons.append(prog.A_eq @ x == prog.b_eq)
    for q in prog.qconstraints:
        cons.append(0.5 * cp.quad_form(x, cp.psd_wrap(q.H)) + q.g @ x + q.c <= 0)
    obj = 0.5 * cp.quad_form(x, cp.psd_wrap(prog.H)) + prog.g @ x + prog.c
    pr = cp.Problem(cp.Minimize(obj), cons)
    pr.solve(solver=cp.CLARABEL)
    return pr.value, x.value


# -- program validation -------------------------------------------------------

def test_rejects_indefinite_objective():
    with pytest.raises(ValueError):
        ConvexProgram(-np.eye(2), np.zeros(2))


def test_rejects_indefinite_quadratic_constraint():
    with pytest.raises(ValueError):
        ConvexProgram(np.eye(2), np.zeros(2), qconstraints=((np.diag([1.0, -1.0]), np.zeros(2), -1.0),))


def test_rejects_inconsistent_dims():
    with pytest.raises(ValueError):
        ConvexProgram(np.eye(2), np.zeros(2), A_in=np.ones((2, 2)), b_in=np.ones(3))


# -- LP -------------------------------------------------------------------------

def test_lp_examples():
    assert solve_lp([-1.0], [[1.0]], [1.0]).x == pytest.approx([1.0])
    box_A = np.vstack([np.eye(2), -np.eye(2)])
    res = solve_lp([-1.0, -1.0], box_A, np.ones(4))
    assert -res.objective_value == pytest.approx(2.0)
    assert solve_lp([-1.0], [[1.0], [-1.0]], [-1.0, -1.0]).status == Status.INFEASIBLE
    assert solve_lp([-1.0], [[-1.0]], [1.0]).status == Status.UNBOUNDED


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_lp_strong_duality(seed):
    rng = np.random.default_rng(seed)
    n, m = 4, 10
    A = rng.normal(size=(m, n))
    x0 = rng.normal(size=n)
    b = A @ x0 + rng.uniform(0.1, 1.0, m)
    # bounded: add a box
    A = np.vstack([A, np.eye(n), -np.eye(n)])
    b = np.r_[b, 5 + np.abs(x0), 5 + np.abs(x0)]
    c = rng.normal(size=n)
    res = solve_lp(c, A, b)
    assert res.status == Status.OPTIMAL
    y = res.dual_ineq
    assert np.all(y >= -1e-9)
    # dual: max -b'y s.t. A'y = -c, y >= 0
    assert np.allclose(A.T @ y, -c, atol=1e-7)
    assert -b @ y == pytest.approx(res.objective_value, abs=1e-7)


# -- QCQP: small examples --------------------------------------------------------

def test_qcqp_linear_constraint_active():
    prog = ConvexProgram(np.array([[2.0]]), np.array([-4.0]), 4.0, A_in=[[1.0]], b_in=[1.0])
    sol = solve_qcqp(prog)
    assert sol.status == Status.OPTIMAL
    assert sol.x == pytest.approx([1.0], abs=1e-7)
    assert sol.objective_value == pytest.approx(1.0, abs=1e-7)


def test_qcqp_quadratic_constraint_active():
    prog = ConvexProgram(np.array([[2.0]]), np.array([-4.0]), 4.0,
                         qconstraints=((np.array([[2.0]]), np.zeros(1), -0.25),))
    sol = solve_qcqp(prog)
    assert sol.x == pytest.approx([0.5], abs=1e-7)


def test_qcqp_grid_oracle_two_variables():
    # min (x - 1)^2 + (y - 0.8)^2  s.t.  x^2 + 2y^2 <= 1, x + y <= 1.1, |x|,|y| <= 1
    prog = ConvexProgram(2 * np.eye(2), np.array([-2.0, -1.6]), 1.64,
                         A_in=np.vstack([[1.0, 1.0], np.eye(2), -np.eye(2)]), b_in=np.r_[1.1, np.ones(4)],
                         qconstraints=((np.diag([2.0, 4.0]), np.zeros(2), -1.0),))
    sol = solve_qcqp(prog)
    g = np.arange(-1.0, 1.0 + 5e-4, 1e-3)
    X, Y = np.meshgrid(g, g, indexing="ij")
    feas = (X**2 + 2 * Y**2 <= 1) & (X + Y <= 1.1)
    obj = np.where(feas, (X - 1) ** 2 + (Y - 0.8) ** 2, np.inf)
    assert sol.objective_value == pytest.approx(obj.min(), abs=1e-2)
    assert prog.violation(sol.x) <= FEAS_TOL


def test_qcqp_equality_constraints():
    prog = ConvexProgram(np.eye(3), np.zeros(3), A_eq=[[1.0, 1.0, 1.0]], b_eq=[3.0])
    sol = solve_qcqp(prog)
    assert sol.x == pytest.approx([1.0, 1.0, 1.0], abs=1e-7)


def test_qcqp_infeasible_without_init():
    prog = ConvexProgram(np.eye(1), np.zeros(1), A_in=[[1.0], [-1.0]], b_in=[-1.0, -1.0])
    with pytest.raises(Infeasible):
        solve_qcqp(prog)
    prog = ConvexProgram(np.eye(1), np.zeros(1), A_in=[[1.0]], b_in=[-2.0],
                         qconstraints=((np.eye(1) * 2, np.zeros(1), -1.0),))
    assert QCQPSolver().solve(prog).status == Status.INFEASIBLE


# -- QCQP: against an independent conic solver ---------------------------------

@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_qcqp_matches_conic_solver(seed):
    rng = np.random.default_rng(seed)
    prog = random_qcqp(rng)
    sol = solve_qcqp(prog)
    ref_val, _ = cvxpy_solve(prog)
    assert sol.ok
    assert prog.violation(sol.x) <= FEAS_TOL
    assert sol.objective_value == pytest.approx(ref_val, rel=1e-6, abs=1e-6)


# -- warmstart contract -----------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_never_worse_than_feasible_init(seed):
    rng = np.random.default_rng(seed)
    prog = random_qcqp(rng)
    init = np.zeros(prog.n)  # feasible: h > 0 and c_q < 0
    assert prog.violation(init) <= FEAS_TOL
    sol = QCQPSolver().solve(prog, init=init)
    assert prog.violation(sol.x) <= FEAS_TOL
    assert sol.objective_value <= prog.objective(init) + 1e-9


def test_fallback_returns_init_when_iterations_exhausted():
    rng = np.random.default_rng(1)
    prog = random_qcqp(rng)
    init = solve_qcqp(prog).x  # one iteration cannot beat the optimum
    sol = QCQPSolver(max_iter=1).solve(prog, init=init)
    assert sol.fallback
    assert sol.status == Status.FEASIBLE
    assert np.array_equal(sol.x, init)


def test_unconverged_result_is_not_labeled_optimal():
    rng = np.random.default_rng(1)
    prog = random_qcqp(rng)
    sol = QCQPSolver(max_iter=1).solve(prog)
    assert sol.status in (Status.FEASIBLE, Status.NUMERICAL_FAILURE)
    if sol.status == Status.FEASIBLE:
        assert prog.violation(sol.x) <= FEAS_TOL


def test_numerical_failure_from_infeasible_start():
    # feasible program (x, y >= 5, x^2 + y^2 <= 60); one iteration from 0 cannot reach it
    prog = ConvexProgram(np.eye(2), np.zeros(2), A_in=-np.eye(2), b_in=[-5.0, -5.0],
                         qconstraints=((2 * np.eye(2), np.zeros(2), -60.0),))
    assert QCQPSolver(max_iter=1).solve(prog).status == Status.NUMERICAL_FAILURE
    assert QCQPSolver().solve(prog).x == pytest.approx([5.0, 5.0], abs=1e-7)


def test_feasible_status_implies_small_violation():
    rng = np.random.default_rng(5)
    for _ in range(10):
        prog = random_qcqp(rng)
        sol = QCQPSolver().solve(prog, init=np.zeros(prog.n))
        if sol.ok:
            assert sol.max_violation <= FEAS_TOL
            assert sol.max_violation == pytest.approx(max(prog.violation(sol.x), 0.0), abs=1e-15)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 100_000), factor=st.floats(1e-3, 1e3))
def test_argmin_scale_invariance(seed, factor):
    rng = np.random.default_rng(seed)
    prog = random_qcqp(rng)
    a = solve_qcqp(prog).x
    b = solve_qcqp(prog.scaled(factor)).x
    assert np.allclose(a, b, atol=1e-6)
