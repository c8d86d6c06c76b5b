"""Closed-loop experiments: the online filtering loop over linear or vehicle plants."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from . import filter_core as fc
from .convex_solver import ConvexProgram, QCQPSolver, Status
from .errors import Infeasible, InitialInfeasible, WarmstartInfeasible
from .plant import LinearPlant, VehiclePlant
from .polytope import contains_point, sample

log = logging.getLogger(__name__)

INTERVENTION_TOL = 1e-6
MONOTONE_TOL = 1e-6


# -- proposers ---------------------------------------------------------------

@dataclass(frozen=True)
class Proposer:
    """Deterministic stand-in for a human driver or learned policy.

    kind ``constant``: ``u``; ``linear``: ``F x``; ``sinusoid``:
    ``amplitude * sin(2 pi t / period)`` on input ``channel``, optionally plus
    ``F x``.
    """

    kind: str = "constant"
    u: tuple = ()
    F: tuple = ()
    amplitude: float = 0.0
    period: float = 1.0
    channel: int = 0

    @classmethod
    def from_dict(cls, policy: dict) -> "Proposer":
        policy = dict(policy)
        kind = policy.pop("type", policy.pop("kind", "constant"))
        if kind not in ("constant", "linear", "sinusoid"):
            raise ValueError(f"unknown proposer type {kind!r}")
        if "u" in policy:
            policy["u"] = tuple(float(v) for v in np.atleast_1d(policy["u"]))
        if "F" in policy:
            policy["F"] = tuple(tuple(float(v) for v in row) for row in np.atleast_2d(policy["F"]))
        return cls(kind=kind, **policy)

    def to_dict(self) -> dict:
        out = {"type": self.kind}
        if self.u:
            out["u"] = list(self.u)
        if self.F:
            out["F"] = [list(r) for r in self.F]
        if self.kind == "sinusoid":
            out.update(amplitude=self.amplitude, period=self.period, channel=self.channel)
        return out

    def __call__(self, x, t, m):
        u = np.zeros(m)
        if self.kind == "constant" and self.u:
            u = np.array(self.u, dtype=float).reshape(m)
        if self.F:
            u = u + np.array(self.F, dtype=float).reshape(m, -1) @ np.asarray(x, dtype=float)
        if self.kind == "sinusoid":
            u[self.channel] += self.amplitude * np.sin(2.0 * np.pi * t / self.period)
        return u


def proposer(policy, x, t, m=1):
    p = policy if isinstance(policy, Proposer) else Proposer.from_dict(policy)
    return p(x, t, m)


# -- experiments -------------------------------------------------------------

@dataclass
class ExperimentConfig:
    rho_values: list = field(default_factory=lambda: [0.0, 0.5, 1000.0])
    steps: int = 400
    plant: str = "linear"
    seed: int = 0
    x0: list | None = None
    proposer: Proposer = field(default_factory=Proposer)
    disturbance_mode: str = "vertex"
    dt: float = 0.01

    def __post_init__(self):
        if int(self.steps) < 1:
            raise ValueError("steps must be at least 1")
        if self.plant not in ("linear", "nonlinear"):
            raise ValueError(f"plant must be 'linear' or 'nonlinear', got {self.plant!r}")
        if self.disturbance_mode not in ("vertex", "uniform", "none"):
            raise ValueError(f"unknown disturbance_mode {self.disturbance_mode!r}")
        if isinstance(self.proposer, dict):
            self.proposer = Proposer.from_dict(self.proposer)


@dataclass
class TrajectoryLog:
    rho: float
    plant: str
    seed: int
    dt: float
    x: np.ndarray
    u_L: np.ndarray
    u: np.ndarray
    w: np.ndarray
    w_in_W: np.ndarray
    V: np.ndarray
    l: np.ndarray
    status: list
    fallback: np.ndarray
    violation: np.ndarray
    lyapunov_slack: np.ndarray
    warmstart_reset: np.ndarray
    x_final: np.ndarray
    V_final: float
    warmstarts: list | None = None

    @property
    def steps(self) -> int:
        return self.x.shape[0]

    @property
    def t(self):
        return np.arange(self.steps) * self.dt

    @property
    def du_norm(self):
        return np.linalg.norm(self.u - self.u_L, axis=1)

    def csv_header(self):
        n, m = self.x.shape[1], self.u.shape[1]
        return (["t"] + [f"x{i + 1}" for i in range(n)] + [f"uL{i + 1}" for i in range(m)]
                + [f"u{i + 1}" for i in range(m)] + ["du_norm"] + [f"w{i + 1}" for i in range(n)]
                + ["w_in_W", "V", "l", "status"])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.csv_header())
        du = self.du_norm
        for k in range(self.steps):
            row = [k * self.dt, *self.x[k], *self.u_L[k], *self.u[k], du[k], *self.w[k]]
            writer.writerow([repr(float(v)) for v in row]
                            + [int(self.w_in_W[k]), repr(float(self.V[k])), repr(float(self.l[k])), self.status[k]])
        return buf.getvalue()


def _project_onto(W, w, solver):
    n = W.dim
    prog = ConvexProgram(np.eye(n), -w, 0.5 * float(w @ w), None, None, W.A, W.b, validate=False)
    sol = solver.solve(prog)
    if not sol.ok:
        raise RuntimeError("projection onto W failed")
    return sol.x


def run_experiment(cfg: ExperimentConfig, design: fc.FilterDesign, rho=None, vehicle: VehiclePlant | None = None,
                   keep_warmstarts=False) -> TrajectoryLog:
    """Run the online filter loop for ``cfg.steps`` steps.

    ``rho`` overrides ``design.rho``. The nonlinear plant needs ``vehicle``;
    states are in deviation coordinates around its operating point.
    """
    if rho is not None:
        design = design.with_rho(rho)
    n, m = design.n, design.m
    solver = QCQPSolver()
    rng = np.random.default_rng(cfg.seed)
    if cfg.plant == "nonlinear" and vehicle is None:
        raise ValueError("nonlinear plant requires a VehiclePlant")
    linear = LinearPlant(design.A, design.B)

    x = np.zeros(n) if cfg.x0 is None else np.asarray(cfg.x0, dtype=float).copy()
    try:
        warm = fc.initial_warmstart(design, x, solver)
    except Infeasible as exc:
        raise InitialInfeasible(f"x0 admits no feasible input sequence: {exc}") from exc

    T = int(cfg.steps)
    xs, uLs, us, ws = (np.zeros((T, n)), np.zeros((T, m)), np.zeros((T, m)), np.zeros((T, n)))
    w_in = np.ones(T, dtype=bool)
    V, L = np.zeros(T), np.zeros(T)
    status, fallback = [], np.zeros(T, dtype=bool)
    viol, slack, reset = np.zeros(T), np.zeros(T), np.zeros(T, dtype=bool)
    warmstarts = [] if keep_warmstarts else None

    for k in range(T):
        t = k * cfg.dt
        u_L = cfg.proposer(x, t, m)
        xs[k], uLs[k] = x, u_L
        V[k] = fc.lyapunov_value(design, x, warm)
        L[k] = fc.stage_cost(design, x, warm[0])
        if keep_warmstarts:
            warmstarts.append(warm.copy())
        try:
            res = fc.filter_step(design, x, warm, u_L, solver)
        except WarmstartInfeasible as exc:
            exc.step = k
            raise
        u = res.u_applied
        us[k] = u
        status.append(res.status.value)
        fallback[k], viol[k], slack[k] = res.fallback, res.violation, res.lyapunov_slack

        if cfg.plant == "linear":
            if cfg.disturbance_mode == "none":
                w = np.zeros(n)
            else:
                w = sample(design.W, rng, cfg.disturbance_mode)
            x_next = linear.step(x, u, w)
        else:
            x_next = vehicle.step(x, u)
            w = x_next - linear.step(x, u)
        ws[k] = w
        w_used = w
        if not contains_point(design.W, w):
            w_in[k] = False
            w_used = _project_onto(design.W, w, solver)

        warm = fc.advance_warmstart(design, x_next, res.vseq, w_used)
        if not w_in[k] and not fc.is_sequence_feasible(design, x_next, warm, fc.WARMSTART_TOL):
            # w outside W voids the candidate guarantee; restart from a fresh sequence
            try:
                warm = fc.initial_warmstart(design, x_next, solver)
            except Infeasible as exc:
                raise WarmstartInfeasible(f"state left the feasible region at step {k + 1}",
                                          step=k + 1) from exc
            reset[k] = True
            log.info("step %d: warmstart reset after w outside W", k)
        x = x_next

    return TrajectoryLog(
        rho=design.rho, plant=cfg.plant, seed=cfg.seed, dt=cfg.dt, x=xs, u_L=uLs, u=us, w=ws, w_in_W=w_in,
        V=V, l=L, status=status, fallback=fallback, violation=viol, lyapunov_slack=slack, warmstart_reset=reset,
        x_final=x, V_final=fc.lyapunov_value(design, x, warm), warmstarts=warmstarts,
    )


def metrics(log_: TrajectoryLog) -> dict:
    """Summary numbers reported per run."""
    V_next = np.r_[log_.V[1:], log_.V_final]
    if log_.rho < 1.0:
        excess = V_next - (log_.V - (1.0 - log_.rho) * log_.l)
        monotone_viol = int(np.sum(excess > MONOTONE_TOL * np.maximum(1.0, log_.V)))
    else:
        monotone_viol = 0
    return {
        "rho": log_.rho,
        "plant": log_.plant,
        "seed": log_.seed,
        "steps": log_.steps,
        "max_abs_p_y": float(np.max(np.abs(log_.x[:, 0]))) if log_.steps else 0.0,
        "interventions": int(np.sum(log_.du_norm > INTERVENTION_TOL)),
        "initial_state_norm": float(np.linalg.norm(log_.x[0])),
        "final_state_norm": float(np.linalg.norm(log_.x_final)),
        "lyapunov_monotonicity_violations": monotone_viol,
        "fallbacks": int(np.sum(log_.fallback)),
        "w_outside_W": int(np.sum(~log_.w_in_W)),
        "w_outside_W_fraction": float(np.mean(~log_.w_in_W)) if log_.steps else 0.0,
        "warmstart_resets": int(np.sum(log_.warmstart_reset)),
        "max_constraint_violation": float(np.max(log_.violation)) if log_.steps else 0.0,
    }
