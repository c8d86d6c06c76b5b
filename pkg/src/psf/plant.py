"""Simulation plants: linear design model and the miniature-car bicycle model.

The bicycle model follows the usual dynamic single-track formulation used for
1:43 scale RC cars, with Pacejka lateral forces on both axles and a simple
drivetrain map for the longitudinal force. States are
``[p_y, psi, v_x, v_y, r]``, inputs ``[delta, tau]``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

import numpy as np
from scipy.optimize import brentq

from .control_math import numerical_jacobian
from .errors import ConfigError, DegenerateSpeed, NoSteadyState

STATE_NAMES = ("p_y", "psi", "v_x", "v_y", "r")
INPUT_NAMES = ("delta", "tau")


@dataclass(frozen=True)
class BicycleParams:
    # Defaults: a published identification of a 1:43 scale RC race car.
    mass: float = 0.041
    inertia_z: float = 27.8e-6
    l_f: float = 0.029
    l_r: float = 0.033
    B_f: float = 2.579
    C_f: float = 1.2
    D_f: float = 0.192
    B_r: float = 3.3852
    C_r: float = 1.2691
    D_r: float = 0.1737
    motor_gain: float = 0.287  # Cm1
    motor_speed_loss: float = 0.0545  # Cm2
    rolling_resistance: float = 0.0518  # Cr0
    drag: float = 0.00035  # Cr2
    friction_scale: float = 0.3
    v_min: float = 0.05

    def __post_init__(self):
        for name in ("mass", "inertia_z", "l_f", "l_r", "D_f", "D_r", "v_min"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"vehicle.{name} must be positive")
        if not 0 < self.friction_scale <= 1:
            raise ConfigError("vehicle.friction_scale must lie in (0, 1]")

    @classmethod
    def from_dict(cls, data: dict) -> "BicycleParams":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown vehicle keys: {sorted(unknown)}")
        return replace(cls(), **{k: float(v) for k, v in data.items()})

    def to_dict(self) -> dict:
        return asdict(self)


def pacejka_force(alpha, Bc, Cc, Dc):
    """Magic-formula lateral force ``D sin(C atan(B alpha))``."""
    return Dc * np.sin(Cc * np.arctan(Bc * alpha))


def tire_forces(x, delta, p: BicycleParams):
    _, _, vx, vy, r = x
    alpha_f = delta - np.arctan((vy + p.l_f * r) / vx)
    alpha_r = np.arctan((p.l_r * r - vy) / vx)
    F_f = pacejka_force(alpha_f, p.B_f, p.C_f, p.friction_scale * p.D_f)
    F_r = pacejka_force(alpha_r, p.B_r, p.C_r, p.friction_scale * p.D_r)
    return F_f, F_r


def drive_force(vx, tau, p: BicycleParams):
    return (p.motor_gain - p.motor_speed_loss * vx) * tau - p.rolling_resistance - p.drag * vx**2


def bicycle_dynamics(x, u, p: BicycleParams):
    """Continuous-time derivative of the vehicle state under input ``(delta, tau)``."""
    x = np.asarray(x, dtype=float)
    delta, tau = float(u[0]), float(u[1])
    _, psi, vx, vy, r = x
    if not vx > p.v_min:
        raise DegenerateSpeed(f"v_x={vx:.4g} below v_min={p.v_min}")
    F_f, F_r = tire_forces(x, delta, p)
    F_x = drive_force(vx, tau, p)
    return np.array([
        vx * np.sin(psi) + vy * np.cos(psi),
        r,
        (F_x - F_f * np.sin(delta)) / p.mass + vy * r,
        (F_r + F_f * np.cos(delta)) / p.mass - vx * r,
        (p.l_f * F_f * np.cos(delta) - p.l_r * F_r) / p.inertia_z,
    ])


def rk4_step(f, x, u, dt):
    """Classical Runge-Kutta step of ``x' = f(x, u)`` with ``u`` held over ``dt``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    k1 = f(x, u)
    k2 = f(x + 0.5 * dt * k1, u)
    k3 = f(x + 0.5 * dt * k2, u)
    k4 = f(x + dt * k3, u)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def steady_drive(p: BicycleParams, v_op, tol=1e-10):
    """Drive command holding ``v_x = v_op`` on a straight line."""

    def accel(tau):
        return drive_force(v_op, tau, p)

    lo, hi = -10.0, 10.0
    if accel(lo) * accel(hi) > 0:
        raise NoSteadyState(f"no drive command balances resistance at v_x={v_op}")
    try:
        return brentq(accel, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps)
    except (RuntimeError, ValueError) as exc:
        raise NoSteadyState(str(exc)) from exc


class VehiclePlant:
    """RK4-discretized bicycle model exposed in deviation coordinates.

    The filter works on ``dx = x - x_op`` and ``du = u - u_op``; this class
    converts both ways.
    """

    def __init__(self, params: BicycleParams | None = None, v_op=1.1, dt=0.01):
        self.params = params or BicycleParams()
        self.v_op = float(v_op)
        self.dt = float(dt)
        self.u_op = np.array([0.0, steady_drive(self.params, self.v_op)])
        self.x_op = np.array([0.0, 0.0, self.v_op, 0.0, 0.0])

    def f(self, x, u):
        return bicycle_dynamics(x, u, self.params)

    def step_absolute(self, x, u):
        return rk4_step(self.f, x, u, self.dt)

    def step(self, dx, du):
        x_next = self.step_absolute(self.x_op + np.asarray(dx), self.u_op + np.asarray(du))
        return x_next - self.x_op

    def linearize(self, eps=1e-6):
        return numerical_jacobian(self.step, np.zeros(5), np.zeros(2), eps=eps)


def linearize_vehicle(p: BicycleParams, v_op=1.1, dt=0.01, eps=1e-6):
    """Jacobians of the discrete RK4 map at straight-line driving.

    Returns ``(A, B, u_op)`` in deviation coordinates around
    ``x_op = (0, 0, v_op, 0, 0)``.
    """
    plant = VehiclePlant(p, v_op=v_op, dt=dt)
    A, B = plant.linearize(eps=eps)
    return A, B, plant.u_op


class LinearPlant:
    """``x+ = A x + B u + w``."""

    def __init__(self, A, B):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.B = np.asarray(B, dtype=float).reshape(self.A.shape[0], -1)

    def step(self, x, u, w=None):
        x_next = self.A @ x + self.B @ np.atleast_1d(u)
        if w is not None:
            x_next = x_next + w
        return x_next
