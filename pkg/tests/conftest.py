import numpy as np
import pytest

from psf.cli import design_from_config, vehicle_from_config
from psf.config import builtin_config, parse_config
from psf.control_math import LinearSystem
from psf.filter_core import design_filter
from psf.polytope import HalfspacePolytope


@pytest.fixture(scope="session")
def vehicle_config():
    return parse_config(builtin_config("vehicle"))


@pytest.fixture(scope="session")
def vehicle_design(vehicle_config):
    return design_from_config(vehicle_config)


@pytest.fixture(scope="session")
def vehicle_plant(vehicle_config):
    return vehicle_from_config(vehicle_config)


@pytest.fixture(scope="session")
def toy_design():
    """Scalar integrator x+ = x + u + w."""
    return design_filter(LinearSystem([[1.0]], [[1.0]]), [[1.0]], [[1.0]],
                         HalfspacePolytope.symmetric_box([1.0]), HalfspacePolytope.symmetric_box([1.0]),
                         HalfspacePolytope.symmetric_box([0.05]), 5, 0.0)


@pytest.fixture(scope="session")
def planar_design():
    """Two-state, one-input system with a non-box terminal set."""
    A = np.array([[1.0, 0.1], [0.0, 1.0]])
    B = np.array([[0.005], [0.1]])
    X = HalfspacePolytope.symmetric_box([1.0, 1.0])
    U = HalfspacePolytope.symmetric_box([1.0])
    W = HalfspacePolytope.symmetric_box([0.005, 0.005])
    return design_filter(LinearSystem(A, B), np.eye(2), np.eye(1), X, U, W, 6, 0.0)


def pytest_configure(config):
    config._acceptance_lines = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
