"""LP backend and a primal-dual interior-point solver for convex QCQPs.

Programs have the form::

    minimize    1/2 x'Hx + g'x + c
    subject to  A_eq x  = b_eq
                A_in x <= b_in
                1/2 x'H_j x + g_j'x + c_j <= 0     (j = 1..q)

:func:`solve_qcqp` only promises a *feasible* point when a feasible ``init``
is supplied: whatever the iterations produce, the returned point is never
worse than ``init``.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linprog

from .errors import Infeasible

log = logging.getLogger(__name__)

FEAS_TOL = 1e-7
OPT_TOL = 1e-6
# total duality gap; the argmin of a squared distance is only accurate to sqrt(gap)
GAP_TOL = 1e-13


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    FEASIBLE = "Feasible"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass(frozen=True)
class Solution:
    x: np.ndarray
    status: Status
    objective_value: float
    max_violation: float
    iterations: int = 0
    fallback: bool = False
    dual_ineq: np.ndarray | None = None
    dual_eq: np.ndarray | None = None

    @property
    def ok(self) -> bool:
        return self.status in (Status.OPTIMAL, Status.FEASIBLE)


def _psd_check(M, name):
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square")
    scale = max(1.0, float(np.abs(M).max(initial=0.0)))
    if not np.allclose(M, M.T, atol=1e-10 * scale, rtol=0):
        raise ValueError(f"{name} must be symmetric")
    if M.size and np.linalg.eigvalsh(0.5 * (M + M.T)).min() < -1e-9 * scale:
        raise ValueError(f"{name} must be positive semidefinite")


@dataclass(frozen=True)
class QuadConstraint:
    """``1/2 x'Hx + g'x + c <= 0``."""

    H: np.ndarray
    g: np.ndarray
    c: float

    def value(self, x):
        return 0.5 * x @ self.H @ x + self.g @ x + self.c

    def grad(self, x):
        return self.H @ x + self.g


@dataclass(frozen=True)
class ConvexProgram:
    H: np.ndarray
    g: np.ndarray
    c: float = 0.0
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_in: np.ndarray | None = None
    b_in: np.ndarray | None = None
    qconstraints: tuple = field(default_factory=tuple)
    validate: bool = True

    def __post_init__(self):
        n = len(self.g)
        H = np.asarray(self.H, dtype=float).reshape(n, n)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "g", np.asarray(self.g, dtype=float))
        for A_name, b_name in (("A_eq", "b_eq"), ("A_in", "b_in")):
            A = getattr(self, A_name)
            b = getattr(self, b_name)
            A = np.zeros((0, n)) if A is None else np.asarray(A, dtype=float).reshape(-1, n)
            b = np.zeros(0) if b is None else np.asarray(b, dtype=float).ravel()
            if A.shape[0] != b.shape[0]:
                raise ValueError(f"{A_name} and {b_name} have inconsistent lengths")
            object.__setattr__(self, A_name, A)
            object.__setattr__(self, b_name, b)
        qc = tuple(
            q if isinstance(q, QuadConstraint)
            else QuadConstraint(np.asarray(q[0], float).reshape(n, n), np.asarray(q[1], float), float(q[2]))
            for q in self.qconstraints
        )
        object.__setattr__(self, "qconstraints", qc)
        if self.validate:
            _psd_check(H, "H")
            for j, q in enumerate(qc):
                _psd_check(q.H, f"qconstraints[{j}].H")

    @property
    def n(self) -> int:
        return self.g.shape[0]

    def objective(self, x) -> float:
        return float(0.5 * x @ self.H @ x + self.g @ x + self.c)

    def violation(self, x) -> float:
        """Largest constraint violation, evaluated directly from the data."""
        v = 0.0
        if self.b_in.size:
            v = max(v, float(np.max(self.A_in @ x - self.b_in)))
        if self.b_eq.size:
            v = max(v, float(np.max(np.abs(self.A_eq @ x - self.b_eq))))
        for q in self.qconstraints:
            v = max(v, float(q.value(x)))
        return v

    def scaled(self, factor: float) -> "ConvexProgram":
        return ConvexProgram(
            factor * self.H, factor * self.g, factor * self.c, self.A_eq, self.b_eq,
            self.A_in, self.b_in, self.qconstraints, validate=False,
        )


def solve_lp(cost, A_in=None, b_in=None, A_eq=None, b_eq=None, bounds=None, max_iter=10_000) -> Solution:
    """Minimize ``cost'x`` over a polyhedron (variables free unless ``bounds`` given)."""
    cost = np.asarray(cost, dtype=float).ravel()
    n = cost.size
    res = linprog(
        cost, A_ub=A_in, b_ub=b_in, A_eq=A_eq, b_eq=b_eq,
        bounds=bounds if bounds is not None else [(None, None)] * n,
        method="highs", options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10, "maxiter": max_iter},
    )
    if res.status == 0:
        x = res.x
        viol = 0.0
        if A_in is not None and len(b_in):
            viol = max(viol, float(np.max(np.asarray(A_in) @ x - b_in)))
        if A_eq is not None and len(b_eq):
            viol = max(viol, float(np.max(np.abs(np.asarray(A_eq) @ x - b_eq))))
        dual_in = -res.ineqlin.marginals if A_in is not None else None
        dual_eq = -res.eqlin.marginals if A_eq is not None else None
        return Solution(x, Status.OPTIMAL, float(res.fun), viol, int(res.nit), dual_ineq=dual_in, dual_eq=dual_eq)
    if res.status == 2:
        return Solution(np.full(n, np.nan), Status.INFEASIBLE, np.inf, np.inf)
    if res.status == 3:
        return Solution(np.full(n, np.nan), Status.UNBOUNDED, -np.inf, np.nan)
    return Solution(np.full(n, np.nan), Status.NUMERICAL_FAILURE, np.nan, np.nan)


class QCQPSolver:
    """Mehrotra-style primal-dual interior-point method.

    Holds no state between calls except settings; one instance per thread.
    """

    def __init__(self, feas_tol=FEAS_TOL, opt_tol=OPT_TOL, max_iter=500):
        self.feas_tol = feas_tol
        self.opt_tol = opt_tol
        self.max_iter = max_iter

    def solve(self, prog: ConvexProgram, init=None) -> Solution:
        init_ok = False
        if init is not None:
            init = np.asarray(init, dtype=float).ravel()
            init_ok = prog.violation(init) <= self.feas_tol

        with np.errstate(all="ignore"):
            sol = self._ipm(prog, init)
        if sol is not None and sol.max_violation <= self.feas_tol:
            if not init_ok or sol.objective_value <= prog.objective(init) + 1e-12 * max(1.0, abs(prog.objective(init))):
                if sol.status != Status.OPTIMAL:
                    sol = replace(sol, status=Status.FEASIBLE)
                return sol

        if init_ok:
            log.info("QCQP fallback to warmstart (ipm status %s)", None if sol is None else sol.status.value)
            return Solution(init.copy(), Status.FEASIBLE, prog.objective(init), max(prog.violation(init), 0.0),
                            0 if sol is None else sol.iterations, fallback=True)
        if sol is not None and sol.status == Status.INFEASIBLE:
            return sol
        if self._phase_one_infeasible(prog):
            return Solution(np.full(prog.n, np.nan), Status.INFEASIBLE, np.inf, np.inf)
        x = np.full(prog.n, np.nan) if sol is None else sol.x
        return Solution(x, Status.NUMERICAL_FAILURE, np.nan, np.nan if sol is None else sol.max_violation)

    # -- internals -----------------------------------------------------------

    def _phase_one_infeasible(self, prog: ConvexProgram) -> bool:
        if not prog.qconstraints:
            res = solve_lp(np.zeros(prog.n), prog.A_in if prog.b_in.size else None,
                           prog.b_in if prog.b_in.size else None,
                           prog.A_eq if prog.b_eq.size else None, prog.b_eq if prog.b_eq.size else None)
            return res.status == Status.INFEASIBLE
        # minimize t subject to every inequality <= t and t >= -1
        n = prog.n
        A_in = np.hstack([prog.A_in, -np.ones((prog.A_in.shape[0], 1))])
        A_in = np.vstack([A_in, np.r_[np.zeros(n), -1.0]])
        b_in = np.r_[prog.b_in, 1.0]
        qcs = []
        for q in prog.qconstraints:
            Hq = np.zeros((n + 1, n + 1))
            Hq[:n, :n] = q.H
            qcs.append(QuadConstraint(Hq, np.r_[q.g, -1.0], q.c))
        H = np.zeros((n + 1, n + 1))
        H[:n, :n] = 1e-8 * np.eye(n)
        A_eq = np.hstack([prog.A_eq, np.zeros((prog.A_eq.shape[0], 1))])
        aux = ConvexProgram(H, np.r_[np.zeros(n), 1.0], 0.0, A_eq, prog.b_eq, A_in, b_in, tuple(qcs), validate=False)
        with np.errstate(all="ignore"):
            sol = self._ipm(aux, None)
        if sol is None or sol.status != Status.OPTIMAL:
            return False
        return sol.x[-1] > self.feas_tol

    def _ipm(self, prog: ConvexProgram, init):
        n = prog.n
        G, h = prog.A_in, prog.b_in
        Aeq, beq = prog.A_eq, prog.b_eq
        qcs = prog.qconstraints
        ml, mq, p = G.shape[0], len(qcs), Aeq.shape[0]
        m = ml + mq

        x = np.zeros(n) if init is None else init.copy()

        def cons(x):
            out = np.empty(m)
            out[:ml] = G @ x - h
            for j, q in enumerate(qcs):
                out[ml + j] = q.value(x)
            return out

        def jac(x):
            J = np.empty((m, n))
            J[:ml] = G
            for j, q in enumerate(qcs):
                J[ml + j] = q.grad(x)
            return J

        # iterate on the objective scaled to unit size so the path ignores its magnitude
        scale = max(float(np.abs(prog.g).max(initial=0.0)), float(np.abs(prog.H).max(initial=0.0)))
        scale = scale if scale > 0 else 1.0
        H, g = prog.H / scale, prog.g / scale

        def merit(x, y, lam, s, c_x):
            r = np.r_[H @ x + g + jac(x).T @ lam + Aeq.T @ y, c_x + s, Aeq @ x - beq]
            return float(np.linalg.norm(r)) + float(s @ lam)

        c_x = cons(x)
        s = np.maximum(-c_x, 1.0) if m else np.zeros(0)
        lam = np.ones(m)
        y = np.zeros(p)
        it = 0
        status = Status.NUMERICAL_FAILURE
        last = None
        for it in range(1, self.max_iter + 1):
            J = jac(x)
            Hx, Jl, Ay = H @ x, J.T @ lam, Aeq.T @ y
            r_d = Hx + g + Jl + Ay
            # dual residual relative to the terms it balances
            d_scale = max(1.0, *(float(np.max(np.abs(v), initial=0.0)) for v in (Hx, Jl, Ay)))
            r_p = c_x + s
            r_e = Aeq @ x - beq
            mu = float(s @ lam) / m if m else 0.0
            viol = max(float(np.max(c_x, initial=0.0)), float(np.max(np.abs(r_e), initial=0.0)))
            if (np.max(np.abs(r_d), initial=0.0) <= 1e-9 * d_scale
                    and viol <= 1e-10 * max(1.0, np.abs(h).max(initial=0.0))
                    and mu * m <= GAP_TOL * max(1.0, abs(prog.objective(x)) / scale)):
                status = Status.OPTIMAL
                break
            if not (np.all(np.isfinite(x)) and np.isfinite(mu)):
                break
            last = x

            W = H.copy()
            for j, q in enumerate(qcs):
                W += lam[ml + j] * q.H
            D = lam / s
            M = W + (J.T * D) @ J + 1e-12 * np.eye(n)
            K = np.block([[M, Aeq.T], [Aeq, np.zeros((p, p))]]) if p else M

            def newton(r_c):
                rhs = -r_d - J.T @ (D * r_p - r_c / s)
                sol = np.linalg.solve(K, np.r_[rhs, -r_e]) if p else np.linalg.solve(K, rhs)
                dx, dy = sol[:n], sol[n:]
                dlam = D * (J @ dx + r_p) - r_c / s
                ds = -(r_c + s * dlam) / lam
                return dx, dy, dlam, ds

            try:
                dx, dy, dlam, ds = newton(s * lam)
                a_aff = min(_max_step(s, ds), _max_step(lam, dlam))
                mu_aff = float((s + a_aff * ds) @ (lam + a_aff * dlam)) / m if m else 0.0
                sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
                dx, dy, dlam, ds = newton(s * lam + ds * dlam - sigma * mu)
            except np.linalg.LinAlgError:
                break
            alpha = min(1.0, 0.995 * min(_max_step(s, ds), _max_step(lam, dlam)))

            # backtrack on residual norm plus gap, which breaks the cycles quadratic rows
            # can cause; the direction need not descend, so keep the full step if no cut helps
            phi0 = merit(x, y, lam, s, c_x)
            for k in range(8 if phi0 > 1e-8 else 0):
                a = alpha * 0.5**k
                if merit(x + a * dx, y + a * dy, lam + a * dlam, s + a * ds,
                         cons(x + a * dx)) <= (1.0 - 0.01 * a) * phi0:
                    alpha = a
                    break
            x, y, lam, s = x + alpha * dx, y + alpha * dy, lam + alpha * dlam, s + alpha * ds
            c_x = cons(x)
        if status != Status.OPTIMAL and not np.all(np.isfinite(x)):
            # breakdown: hand back the last finite iterate for the caller to re-check
            if last is None:
                return None
            x = last
        x_obj = prog.objective(x)
        return Solution(x, status, x_obj, max(prog.violation(x), 0.0), it,
                        dual_ineq=scale * lam[:ml], dual_eq=scale * y)


def _max_step(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


_default_solver = QCQPSolver()


def solve_qcqp(prog: ConvexProgram, init=None, solver: QCQPSolver | None = None) -> Solution:
    """Solve ``prog``; see :class:`QCQPSolver` for the warmstart guarantee.

    Raises :class:`~psf.errors.Infeasible` only when no ``init`` is given and
    the feasibility phase certifies that the constraints cannot be met.
    """
    sol = (solver or _default_solver).solve(prog, init)
    if sol.status == Status.INFEASIBLE:
        raise Infeasible("convex program is infeasible")
    return sol
