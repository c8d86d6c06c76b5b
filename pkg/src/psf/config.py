"""Run configuration: validated parsing of the JSON config into typed sections.

Keys starting with ``_`` are treated as comments and ignored. Any other
unknown key is rejected with its dotted path.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import ConfigError
from .plant import BicycleParams
from .polytope import HalfspacePolytope
from .sim import ExperimentConfig, Proposer

PRESETS = ("vehicle",)


def _check_keys(section: dict, allowed, path):
    if not isinstance(section, dict):
        raise ConfigError(f"{path}: expected an object, got {type(section).__name__}")
    unknown = [k for k in section if not k.startswith("_") and k not in allowed]
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {', '.join(sorted(unknown))}")


def _matrix(value, path, n=None):
    """Number -> value * I_n; nested list -> matrix."""
    try:
        if np.isscalar(value):
            if n is None:
                raise ConfigError(f"{path}: scalar needs a known dimension")
            return float(value) * np.eye(n)
        M = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: not a numeric matrix ({exc})") from exc
    if M.ndim != 2:
        raise ConfigError(f"{path}: expected a matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ConfigError(f"{path}: non-finite entries")
    return M


def _vector(value, path, length=None):
    try:
        v = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: not a numeric vector ({exc})") from exc
    if v.ndim != 1:
        raise ConfigError(f"{path}: expected a vector, got shape {v.shape}")
    if length is not None and v.size != length:
        raise ConfigError(f"{path}: expected {length} entries, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise ConfigError(f"{path}: non-finite entries")
    return v


def _set(section: dict, name: str, path: str, dim: int) -> HalfspacePolytope:
    """A set given as a polytope ``{"A", "b"}`` or by half-widths ``<name>_bar``."""
    bar_key = f"{name.lower()}_bar"
    if name in section and bar_key in section:
        raise ConfigError(f"{path}: give either {name} or {bar_key}, not both")
    if bar_key in section:
        half = _vector(section[bar_key], f"{path}.{bar_key}", dim)
        if np.any(half < 0):
            raise ConfigError(f"{path}.{bar_key}: half-widths must be nonnegative")
        return HalfspacePolytope.symmetric_box(half)
    if name in section:
        try:
            P = HalfspacePolytope.from_dict(section[name])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{path}.{name}: invalid polytope ({exc})") from exc
        if P.dim != dim:
            raise ConfigError(f"{path}.{name}: dimension {P.dim}, expected {dim}")
        return P
    raise ConfigError(f"{path}: missing {name} (or {bar_key})")


@dataclass
class SystemSection:
    preset: str | None
    A: np.ndarray | None = None
    B: np.ndarray | None = None
    vehicle: BicycleParams | None = None
    v_op: float = 1.1
    dt: float = 0.01

    @property
    def n(self):
        return 5 if self.preset == "vehicle" else self.A.shape[0]

    @property
    def m(self):
        return 2 if self.preset == "vehicle" else self.B.shape[1]


@dataclass
class RunConfig:
    system: SystemSection
    X: HalfspacePolytope
    U: HalfspacePolytope
    W: HalfspacePolytope
    Q: np.ndarray
    R: np.ndarray
    N: int
    rho_values: list
    rpi_max_iter: int
    plants: list
    experiment: ExperimentConfig
    output_dir: str = "runs"
    plots: bool = True
    raw: dict = field(default_factory=dict, repr=False)

    def experiment_for(self, plant: str, seed: int | None = None) -> ExperimentConfig:
        e = self.experiment
        return ExperimentConfig(rho_values=list(self.rho_values), steps=e.steps, plant=plant,
                                seed=e.seed if seed is None else int(seed), x0=e.x0, proposer=e.proposer,
                                disturbance_mode=e.disturbance_mode, dt=e.dt)


def _parse_system(s: dict) -> SystemSection:
    _check_keys(s, ("preset", "A", "B", "vehicle", "v_op", "dt"), "system")
    preset = s.get("preset")
    dt = float(s.get("dt", 0.01))
    if not dt > 0:
        raise ConfigError("system.dt: must be positive")
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"system.preset: unknown preset {preset!r}")
        if "A" in s or "B" in s:
            raise ConfigError("system: give either a preset or matrices A, B, not both")
        params = BicycleParams.from_dict(s.get("vehicle", {}))
        v_op = float(s.get("v_op", 1.1))
        if not v_op > params.v_min:
            raise ConfigError("system.v_op: must exceed vehicle.v_min")
        return SystemSection("vehicle", vehicle=params, v_op=v_op, dt=dt)
    for key in ("vehicle", "v_op"):
        if key in s:
            raise ConfigError(f"system.{key}: only valid with preset 'vehicle'")
    if "A" not in s or "B" not in s:
        raise ConfigError("system: need either preset or both A and B")
    A = _matrix(s["A"], "system.A")
    B = _matrix(s["B"], "system.B")
    if A.shape[0] != A.shape[1]:
        raise ConfigError(f"system.A: must be square, got {A.shape}")
    if B.shape[0] != A.shape[0]:
        raise ConfigError(f"system.B: expected {A.shape[0]} rows, got {B.shape[0]}")
    return SystemSection(None, A=A, B=B, dt=dt)


def parse_config(data: dict) -> RunConfig:
    """Validate a config dictionary and build a :class:`RunConfig`."""
    _check_keys(data, ("system", "constraints", "design", "experiment", "output"), "config")
    for key in ("system", "constraints", "design"):
        if key not in data:
            raise ConfigError(f"config: missing section {key!r}")
    system = _parse_system(data["system"])
    n, m = system.n, system.m

    c = data["constraints"]
    _check_keys(c, ("X", "U", "W", "x_bar", "u_bar", "w_bar"), "constraints")
    X = _set(c, "X", "constraints", n)
    U = _set(c, "U", "constraints", m)
    W = _set(c, "W", "constraints", n)

    d = data["design"]
    _check_keys(d, ("Q", "R", "N", "rho", "rpi_max_iter"), "design")
    for key in ("Q", "R", "N"):
        if key not in d:
            raise ConfigError(f"design: missing {key!r}")
    Q = _matrix(d["Q"], "design.Q", n)
    R = _matrix(d["R"], "design.R", m)
    if Q.shape != (n, n):
        raise ConfigError(f"design.Q: expected shape {(n, n)}, got {Q.shape}")
    if R.shape != (m, m):
        raise ConfigError(f"design.R: expected shape {(m, m)}, got {R.shape}")
    N = d["N"]
    if isinstance(N, bool) or not isinstance(N, int) or N < 1:
        raise ConfigError("design.N: must be a positive integer")
    rho = d.get("rho", [0.0, 0.5, 1000.0])
    rho_values = [float(r) for r in (rho if isinstance(rho, list) else [rho])]
    if not rho_values or any(not np.isfinite(r) or r < 0 for r in rho_values):
        raise ConfigError("design.rho: need one or more finite values >= 0")
    rpi_max_iter = int(d.get("rpi_max_iter", 200))

    e = data.get("experiment", {})
    _check_keys(e, ("steps", "plants", "seed", "x0", "proposer", "disturbance_mode"), "experiment")
    steps = e.get("steps", 400)
    if isinstance(steps, bool) or not isinstance(steps, int) or steps < 1:
        raise ConfigError("experiment.steps: must be an integer >= 1")
    plants = e.get("plants", ["linear", "nonlinear"] if system.preset else ["linear"])
    if isinstance(plants, str):
        plants = [plants]
    for p in plants:
        if p not in ("linear", "nonlinear"):
            raise ConfigError(f"experiment.plants: unknown plant {p!r}")
    if "nonlinear" in plants and system.preset != "vehicle":
        raise ConfigError("experiment.plants: 'nonlinear' requires system.preset 'vehicle'")
    x0 = _vector(e["x0"], "experiment.x0", n).tolist() if "x0" in e else None
    try:
        prop = Proposer.from_dict(e.get("proposer", {"type": "constant"}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"experiment.proposer: {exc}") from exc
    if prop.F and np.array(prop.F).shape != (m, n):
        raise ConfigError(f"experiment.proposer.F: expected shape {(m, n)}")
    if prop.u and len(prop.u) != m:
        raise ConfigError(f"experiment.proposer.u: expected {m} entries")
    if prop.kind == "sinusoid" and not 0 <= prop.channel < m:
        raise ConfigError("experiment.proposer.channel: out of range")
    try:
        exp = ExperimentConfig(rho_values=rho_values, steps=steps, plant=plants[0], seed=int(e.get("seed", 0)),
                               x0=x0, proposer=prop, disturbance_mode=e.get("disturbance_mode", "vertex"),
                               dt=system.dt)
    except ValueError as exc:
        raise ConfigError(f"experiment: {exc}") from exc

    o = data.get("output", {})
    _check_keys(o, ("directory", "plots"), "output")
    return RunConfig(system, X, U, W, Q, R, N, rho_values, rpi_max_iter, list(plants), exp,
                     output_dir=str(o.get("directory", "runs")), plots=bool(o.get("plots", True)),
                     raw=copy.deepcopy(data))


def loads_config(text: str) -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return parse_config(data)


def builtin_config(name: str = "vehicle") -> dict:
    """Shipped configs: ``vehicle`` (lane keeping) and ``toy`` (scalar system)."""
    path = resources.files("psf") / "configs" / f"{name}.json"
    if not path.is_file():
        raise ConfigError(f"no built-in config named {name!r}")
    return json.loads(path.read_text())
