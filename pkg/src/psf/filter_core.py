"""Stability filter for linear systems with polytopic constraints.

The filter projects a proposed input onto the inputs of a tube-based robust
MPC problem that additionally enforces a decrease of the implicit Lyapunov
function ``V(x, u) = sum_i l(z_i, u_i) + m(z_N)`` relative to the stored
warmstart sequence.

Sequences are handled as ``(N, m)`` arrays throughout.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import polytope as pt
from .control_math import (
    CostMatrices,
    LinearSystem,
    lyapunov_residual,
    solve_dare,
    solve_discrete_lyapunov,
    spectral_radius,
)
from .convex_solver import FEAS_TOL, ConvexProgram, QCQPSolver, QuadConstraint, Solution, Status
from .errors import DesignInfeasible, EmptyInvariantSet, Infeasible, WarmstartInfeasible
from .polytope import HalfspacePolytope, ImplicitSumSet

log = logging.getLogger(__name__)

DESIGN_VERSION = "psf-design-v1"
CERT_TOL = 1e-8
WARMSTART_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class FilterDesign:
    sys: LinearSystem
    K: np.ndarray
    costs: CostMatrices
    N: int
    rho: float
    W: HalfspacePolytope
    X: HalfspacePolytope
    U: HalfspacePolytope
    omega_x: tuple
    omega_u: tuple
    Zf: HalfspacePolytope
    Xf: HalfspacePolytope
    certificates: dict = field(default_factory=dict)

    @property
    def A(self):
        return self.sys.A

    @property
    def B(self):
        return self.sys.B

    @property
    def A_K(self):
        return self.sys.A + self.sys.B @ self.K

    @property
    def n(self):
        return self.sys.n

    @property
    def m(self):
        return self.sys.m

    def with_rho(self, rho: float) -> "FilterDesign":
        """Same offline sets, different interpolation parameter."""
        return FilterDesign(self.sys, self.K, self.costs, self.N, float(rho), self.W, self.X, self.U,
                            self.omega_x, self.omega_u, self.Zf, self.Xf, dict(self.certificates))

    @cached_property
    def _condensed(self) -> "_Condensed":
        return _Condensed(self)

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "version": DESIGN_VERSION,
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "K": self.K.tolist(),
            "Q": self.costs.Q.tolist(),
            "R": self.costs.R.tolist(),
            "P": self.costs.P.tolist(),
            "N": self.N,
            "rho": self.rho,
            "W": self.W.to_dict(),
            "X": self.X.to_dict(),
            "U": self.U.to_dict(),
            "omega_x": [s.to_dict() for s in self.omega_x],
            "omega_u": [s.to_dict() for s in self.omega_u],
            "Zf": self.Zf.to_dict(),
            "Xf": self.Xf.to_dict(),
            "certificates": self.certificates,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FilterDesign":
        if data.get("version") != DESIGN_VERSION:
            raise ValueError(f"unsupported design version {data.get('version')!r}")
        P = HalfspacePolytope.from_dict
        return cls(
            LinearSystem(np.array(data["A"], dtype=float), np.array(data["B"], dtype=float)),
            np.array(data["K"], dtype=float),
            CostMatrices(np.array(data["Q"], dtype=float), np.array(data["R"], dtype=float),
                         np.array(data["P"], dtype=float)),
            int(data["N"]),
            float(data["rho"]),
            P(data["W"]), P(data["X"]), P(data["U"]),
            tuple(P(s) for s in data["omega_x"]),
            tuple(P(s) for s in data["omega_u"]),
            P(data["Zf"]), P(data["Xf"]),
            dict(data.get("certificates", {})),
        )


def _as_seq(design: FilterDesign, useq, length=None):
    useq = np.asarray(useq, dtype=float)
    return useq.reshape(length if length is not None else -1, design.m)


# -- nominal predictions and the Lyapunov function ---------------------------

def rollout(design: FilterDesign, x, useq, k=None):
    """Nominal states ``z_0 .. z_k`` of ``z+ = A z + B u`` from ``z_0 = x``."""
    useq = _as_seq(design, useq)
    k = useq.shape[0] if k is None else k
    if useq.shape[0] < k:
        raise ValueError(f"need {k} inputs, got {useq.shape[0]}")
    z = np.empty((k + 1, design.n))
    z[0] = x
    for i in range(k):
        z[i + 1] = design.A @ z[i] + design.B @ useq[i]
    return z


def stage_cost(design: FilterDesign, x, u) -> float:
    return 0.5 * float(x @ design.costs.Q @ x) + 0.5 * float(u @ design.costs.R @ u)


def terminal_cost(design: FilterDesign, x) -> float:
    return 0.5 * float(x @ design.costs.P @ x)


def lyapunov_value(design: FilterDesign, x, useq) -> float:
    useq = _as_seq(design, useq, design.N)
    z = rollout(design, x, useq)
    return sum(stage_cost(design, z[i], useq[i]) for i in range(design.N)) + terminal_cost(design, z[-1])


def decrease_bound(design: FilterDesign, x, warmstart) -> float:
    """Right-hand side of the Lyapunov decrease constraint."""
    warmstart = _as_seq(design, warmstart, design.N)
    V = lyapunov_value(design, x, warmstart)
    if design.rho >= 1.0:
        return V + design.rho
    return V - (1.0 - design.rho) * stage_cost(design, np.asarray(x, dtype=float), warmstart[0])


# -- candidate generating functions ------------------------------------------

def xi_c(design: FilterDesign, x_plus, vseq, w=None):
    """Shifted sequence with disturbance feedback and terminal controller appended.

    The last entry needs the predecessor's nominal terminal state
    ``phi(x, v; N)``; it is recovered from ``x_plus - w``, the nominal
    successor, by rolling the remaining inputs forward.
    """
    vseq = _as_seq(design, vseq, design.N)
    x_plus = np.asarray(x_plus, dtype=float)
    w = np.zeros(design.n) if w is None else np.asarray(w, dtype=float)
    N, K, A_K = design.N, design.K, design.A_K
    z_nom = rollout(design, x_plus - w, vseq[1:], N - 1)
    out = np.empty_like(vseq)
    e = w.copy()
    for i in range(N - 1):
        out[i] = vseq[i + 1] + K @ e
        e = A_K @ e
    out[N - 1] = K @ z_nom[-1] + K @ e
    return out


def xi_f(design: FilterDesign, x, vseq=None):
    """Terminal controller ``u = K x`` applied ``N`` times from ``x``."""
    x = np.asarray(x, dtype=float)
    out = np.empty((design.N, design.m))
    for i in range(design.N):
        out[i] = design.K @ x
        x = design.A_K @ x
    return out


def xi_switch(design: FilterDesign, x_plus, vseq, w=None):
    cand = xi_c(design, x_plus, vseq, w)
    if design.Zf.contains_point(x_plus):
        term = xi_f(design, x_plus)
        if lyapunov_value(design, x_plus, term) <= lyapunov_value(design, x_plus, cand):
            return term
    return cand


def advance_warmstart(design: FilterDesign, x_next, vseq, w=None):
    return xi_switch(design, x_next, vseq, w)


# -- feasibility of a sequence -----------------------------------------------

def sequence_violation(design: FilterDesign, x, useq) -> float:
    """Largest violation of the tightened constraints along the nominal rollout."""
    useq = _as_seq(design, useq, design.N)
    z = rollout(design, x, useq)
    viol = 0.0
    for i in range(design.N):
        viol = max(viol, pt.point_violation(design.omega_u[i], useq[i]))
        viol = max(viol, pt.point_violation(design.omega_x[i], z[i]))
    return max(viol, pt.point_violation(design.Zf, z[-1]))


def is_sequence_feasible(design: FilterDesign, x, useq, tol=FEAS_TOL) -> bool:
    return sequence_violation(design, x, useq) <= tol


# -- condensed problem -------------------------------------------------------

class _Condensed:
    """Prediction matrices ``z_i = Phi_i x + Gamma_i v`` and derived data."""

    def __init__(self, d: FilterDesign):
        n, m, N = d.n, d.m, d.N
        A, B = d.A, d.B
        Phi = [np.eye(n)]
        Gamma = [np.zeros((n, N * m))]
        for i in range(N):
            Phi.append(A @ Phi[-1])
            G = A @ Gamma[-1]
            G[:, i * m:(i + 1) * m] += B
            Gamma.append(G)
        self.Phi, self.Gamma = Phi, Gamma
        E = [np.zeros((m, N * m)) for _ in range(N)]
        for i in range(N):
            E[i][:, i * m:(i + 1) * m] = np.eye(m)
        self.E = E

        # V((z_1, shift(v))) as 1/2 v'Hv + x'F'v + 1/2 x'Mx
        Q, R, P, K = d.costs.Q, d.costs.R, d.costs.P, d.K
        T = Q + K.T @ R @ K + d.A_K.T @ P @ d.A_K
        H = Gamma[N].T @ T @ Gamma[N]
        F = Gamma[N].T @ T @ Phi[N]
        M = Phi[N].T @ T @ Phi[N]
        for i in range(1, N):
            H += Gamma[i].T @ Q @ Gamma[i] + E[i].T @ R @ E[i]
            F += Gamma[i].T @ Q @ Phi[i]
            M += Phi[i].T @ Q @ Phi[i]
        self.H_V = 0.5 * (H + H.T)
        self.F_V = F
        self.M_V = 0.5 * (M + M.T)

        # V((x, v)) itself, used by the initial warmstart problem
        Hc = Gamma[N].T @ P @ Gamma[N]
        Fc = Gamma[N].T @ P @ Phi[N]
        for i in range(N):
            Hc += Gamma[i].T @ Q @ Gamma[i] + E[i].T @ R @ E[i]
            Fc += Gamma[i].T @ Q @ Phi[i]
        self.H_cost = 0.5 * (Hc + Hc.T)
        self.F_cost = Fc

        # linear constraints: G v <= h0 + S x
        rows_G, rows_h, rows_S = [], [], []
        for i in range(N):
            Ou = d.omega_u[i]
            rows_G.append(Ou.A @ E[i])
            rows_h.append(Ou.b)
            rows_S.append(np.zeros((Ou.n_rows, n)))
        for i in range(1, N):
            Ox = d.omega_x[i]
            rows_G.append(Ox.A @ Gamma[i])
            rows_h.append(Ox.b)
            rows_S.append(-Ox.A @ Phi[i])
        rows_G.append(d.Zf.A @ Gamma[N])
        rows_h.append(d.Zf.b)
        rows_S.append(-d.Zf.A @ Phi[N])
        self.G = np.vstack(rows_G)
        self.h0 = np.concatenate(rows_h)
        self.S = np.vstack(rows_S)
        # drop rows that do not involve v (pure conditions on x)
        self.G_active = np.any(self.G != 0, axis=1)


def lyapunov_quadratic(design: FilterDesign, x):
    """``(H, g, c)`` with ``V((Ax + Bv_0, xi_c(Ax + Bv_0, v, 0))) = 1/2 v'Hv + g'v + c``."""
    cd = design._condensed
    x = np.asarray(x, dtype=float)
    return cd.H_V, cd.F_V @ x, 0.5 * float(x @ cd.M_V @ x)


def build_problem(design: FilterDesign, x, warmstart, u_L, bound=None) -> ConvexProgram:
    """Condensed filter program in the stacked inputs ``v``.

    ``bound`` overrides the decrease bound; pass ``np.inf`` to drop the
    Lyapunov constraint (plain safety filter).
    """
    cd = design._condensed
    x = np.asarray(x, dtype=float)
    u_L = np.atleast_1d(np.asarray(u_L, dtype=float))
    E0 = cd.E[0]
    H = E0.T @ E0
    g = -E0.T @ u_L
    c = 0.5 * float(u_L @ u_L)
    h = cd.h0 + cd.S @ x
    act = cd.G_active
    qcs = ()
    if bound is None:
        bound = decrease_bound(design, x, warmstart)
    if np.isfinite(bound):
        Hq, gq, cq = lyapunov_quadratic(design, x)
        qcs = (QuadConstraint(Hq, gq, cq - bound),)
    return ConvexProgram(H, g, c, None, None, cd.G[act], h[act], qcs, validate=False)


@dataclass(frozen=True)
class StepResult:
    u_applied: np.ndarray
    vseq: np.ndarray
    status: Status
    fallback: bool
    objective: float
    lyapunov_slack: float
    violation: float


def filter_step(design: FilterDesign, x, warmstart, u_L, solver: QCQPSolver | None = None,
                lyapunov=True) -> StepResult:
    """One pass of the online filter: project ``u_L`` given a feasible warmstart.

    ``lyapunov=False`` solves the plain safety filter on the same sets.
    """
    x = np.asarray(x, dtype=float)
    warmstart = _as_seq(design, warmstart, design.N)
    viol = sequence_violation(design, x, warmstart)
    if viol > WARMSTART_TOL:
        raise WarmstartInfeasible(f"warmstart violates constraints by {viol:.3e}", violation=viol)
    bound = decrease_bound(design, x, warmstart) if lyapunov else np.inf
    prog = build_problem(design, x, warmstart, u_L, bound=bound)
    sol: Solution = (solver or QCQPSolver()).solve(prog, init=warmstart.ravel())
    if not sol.ok:
        raise WarmstartInfeasible(f"filter problem returned {sol.status.value} with a feasible warmstart")
    if sol.fallback:
        log.info("solver fell back to the warmstart (%s)", sol.status.value)
    vseq = sol.x.reshape(design.N, design.m)
    if prog.qconstraints:
        slack = -float(prog.qconstraints[0].value(sol.x))
    else:
        Hq, gq, cq = lyapunov_quadratic(design, x)
        slack = decrease_bound(design, x, warmstart) - (0.5 * sol.x @ Hq @ sol.x + gq @ sol.x + cq)
    return StepResult(vseq[0].copy(), vseq, sol.status, sol.fallback, sol.objective_value, slack,
                      sequence_violation(design, x, vseq))


def initial_warmstart(design: FilterDesign, x0, solver: QCQPSolver | None = None):
    """Feasible sequence at ``x0`` minimizing ``V((x0, v))`` without the decrease constraint."""
    cd = design._condensed
    x0 = np.asarray(x0, dtype=float)
    if not design.X.contains_point(x0, tol=FEAS_TOL):
        raise Infeasible("initial state violates the state constraints")
    h = cd.h0 + cd.S @ x0
    act = cd.G_active
    if np.any(h[~act] < -FEAS_TOL):
        raise Infeasible("initial state violates a constraint independent of the inputs")
    prog = ConvexProgram(cd.H_cost, cd.F_cost @ x0, 0.0, None, None, cd.G[act], h[act], validate=False)
    sol = (solver or QCQPSolver()).solve(prog)
    if not sol.ok:
        raise Infeasible(f"no feasible input sequence from x0 ({sol.status.value})")
    return sol.x.reshape(design.N, design.m)


# -- offline design ----------------------------------------------------------

def _tube_offsets(Pset: HalfspacePolytope, W: HalfspacePolytope, A_K, N, out_map=None):
    """Cumulative support offsets ``h_{M E_i}(a)`` for every row ``a`` and ``i = 0..N``."""
    M = np.eye(A_K.shape[0]) if out_map is None else out_map
    offs = np.zeros((N + 1, Pset.n_rows))
    Apow = np.eye(A_K.shape[0])
    for i in range(1, N + 1):
        offs[i] = offs[i - 1] + np.array([pt.support(W, (M @ Apow).T @ a) for a in Pset.A])
        Apow = A_K @ Apow
    return offs


def tube_set(A_K, W: HalfspacePolytope, i: int) -> ImplicitSumSet:
    """``E_i = W + A_K W + ... + A_K^{i-1} W`` as an implicit sum."""
    terms = []
    Apow = np.eye(A_K.shape[0])
    for _ in range(i):
        terms.append((Apow, W))
        Apow = A_K @ Apow
    return ImplicitSumSet(terms, dim=A_K.shape[0])


def design_filter(sys: LinearSystem, Q, R, X: HalfspacePolytope, U: HalfspacePolytope,
                  W: HalfspacePolytope, N: int, rho: float, rpi_max_iter=200) -> FilterDesign:
    """Offline pipeline: LQR gain, terminal weight, tube tightening, terminal sets."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if N < 1:
        raise ValueError("horizon N must be at least 1")
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    _, K = solve_dare(sys.A, sys.B, Q, R)
    A_K = sys.A + sys.B @ K
    # terminal weight: m(A_K x) - m(x) = -l(x, Kx)
    Q_term = Q + K.T @ R @ K
    P = solve_discrete_lyapunov(A_K, Q_term)
    lyap_res = lyapunov_residual(A_K, P, Q_term)

    off_x = _tube_offsets(X, W, A_K, N)
    off_u = _tube_offsets(U, W, A_K, N, out_map=K)
    omega_x = tuple(HalfspacePolytope(X.A, X.b - off_x[i]) for i in range(N))
    omega_u = tuple(HalfspacePolytope(U.A, U.b - off_u[i]) for i in range(N))
    for name, sets in (("omega_x", omega_x), ("omega_u", omega_u)):
        for i, s in enumerate(sets):
            if s.is_empty():
                raise DesignInfeasible(f"{name}[{i}] is empty: W too large or N too long",
                                       certificate=f"{name}[{i}] nonempty")

    X0 = X.intersect(U.linear_preimage(K))
    try:
        Xf = pt.max_rpi(A_K, X0, W, max_iter=rpi_max_iter)
    except EmptyInvariantSet as exc:
        raise DesignInfeasible(f"terminal set is empty: {exc}", certificate="Xf nonempty") from exc
    off_f = _tube_offsets(Xf, W, A_K, N)
    Zf = HalfspacePolytope(Xf.A, Xf.b - off_f[N])
    if Zf.is_empty():
        raise DesignInfeasible("tightened terminal set Zf is empty", certificate="Zf nonempty")

    design = FilterDesign(sys, K, CostMatrices(Q, R, P), int(N), float(rho), W, X, U,
                          omega_x, omega_u, Zf, Xf)
    certs = verify_design(design)
    certs["lyapunov_residual"] = lyap_res
    failed = failed_certificates(certs)
    if failed:
        raise DesignInfeasible(f"design certificates failed: {', '.join(failed)}", certificate=failed[0])
    design.certificates.update(certs)
    return design


def verify_design(design: FilterDesign) -> dict:
    """Recompute every design certificate from scratch."""
    A_K, K = design.A_K, design.K
    Q_term = design.costs.Q + K.T @ design.costs.R @ K
    certs = {
        "spectral_radius": spectral_radius(A_K),
        "lyapunov_residual": lyapunov_residual(A_K, design.costs.P, Q_term),
        "rpi_slack": pt.rpi_certificate(design.Xf, A_K, design.W),
        "terminal_input_slack": pt.contains_set(design.U, ImplicitSumSet([(K, design.Xf)]))[1],
        "terminal_state_slack": pt.contains_set(design.X, design.Xf)[1],
        "zf_in_omega_slack": pt.contains_set(design.omega_x[-1], design.Zf)[1],
        "omega_x_nested": bool(all(np.all(design.omega_x[i + 1].b <= design.omega_x[i].b)
                                   for i in range(design.N - 1))),
        "omega_u_nested": bool(all(np.all(design.omega_u[i + 1].b <= design.omega_u[i].b)
                                   for i in range(design.N - 1))),
        "omega_x0_is_X": design.omega_x[0].same_data(design.X),
        "omega_u0_is_U": design.omega_u[0].same_data(design.U),
        "sets_nonempty": bool(not design.Zf.is_empty()
                              and not any(s.is_empty() for s in design.omega_x + design.omega_u)),
        "Zf_rows": design.Zf.n_rows,
    }
    return certs


def failed_certificates(certs: dict) -> list:
    failed = []
    if certs["spectral_radius"] >= 1.0:
        failed.append("spectral_radius")
    if certs["lyapunov_residual"] > CERT_TOL:
        failed.append("lyapunov_residual")
    for key in ("rpi_slack", "terminal_input_slack", "terminal_state_slack", "zf_in_omega_slack"):
        if certs[key] < -CERT_TOL:
            failed.append(key)
    for key in ("omega_x_nested", "omega_u_nested", "omega_x0_is_X", "omega_u0_is_U", "sets_nonempty"):
        if not certs[key]:
            failed.append(key)
    return failed
