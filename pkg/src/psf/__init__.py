"""Robust predictive stability filter toolkit.

Offline design of tube-tightened constraint sets and terminal ingredients for
linear systems with polytopic constraints, and an online filter that projects
proposed inputs onto inputs guaranteeing constraint satisfaction and a
decrease of an implicit Lyapunov function.
"""
from .control_math import CostMatrices, LinearSystem, solve_dare, solve_discrete_lyapunov
from .convex_solver import ConvexProgram, QCQPSolver, Solution, Status, solve_lp, solve_qcqp
from .filter_core import (
    FilterDesign,
    design_filter,
    filter_step,
    initial_warmstart,
    lyapunov_value,
)
from .plant import BicycleParams, LinearPlant, VehiclePlant
from .polytope import HalfspacePolytope, ImplicitSumSet
from .sim import ExperimentConfig, Proposer, TrajectoryLog, metrics, run_experiment

__version__ = "0.1.0"

__all__ = [
    "BicycleParams", "ConvexProgram", "CostMatrices", "ExperimentConfig", "FilterDesign",
    "HalfspacePolytope", "ImplicitSumSet", "LinearPlant", "LinearSystem", "Proposer", "QCQPSolver",
    "Solution", "Status", "TrajectoryLog", "VehiclePlant", "design_filter", "filter_step",
    "initial_warmstart", "lyapunov_value", "metrics", "run_experiment", "solve_dare",
    "solve_discrete_lyapunov", "solve_lp", "solve_qcqp",
]
