import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from jetfault import multibody as mb

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def jetbot():
    return mb.load_jetbot()


def box_model_dict(mass=3.0, inertia=(0.2, 0.3, 0.4), com=(0.0, 0.0, 0.0)):
    return {
        "name": "box",
        "gravity": 9.81,
        "links": [{"name": "box", "mass": mass, "com": list(com), "inertia": list(inertia) + [0.0, 0.0, 0.0]}],
        "joints": [],
        "thrusters": [
            {"name": "jet", "link": "box", "position": [0.0, 0.0, 0.0], "axis": [0.0, 0.0, 1.0], "max_thrust": 100.0, "max_rpm": 1e5}
        ],
    }


def arm_model_dict():
    """Base plus a 2-joint planar-ish arm (pitch then roll) with a forearm thruster and a base thruster."""
    return {
        "name": "arm2",
        "gravity": 9.81,
        "links": [
            {"name": "base", "mass": 5.0, "com": [0.01, 0.0, -0.02], "inertia": [0.3, 0.25, 0.2, 0.01, 0.0, 0.0]},
            {"name": "upper", "mass": 1.0, "com": [0.0, 0.0, -0.15], "inertia": [0.02, 0.02, 0.005, 0.0, 0.0, 0.0]},
            {"name": "fore", "mass": 0.8, "com": [0.0, 0.05, -0.1], "inertia": [0.01, 0.012, 0.004, 0.0, 0.001, 0.0]},
        ],
        "joints": [
            {"name": "j1", "parent": "base", "child": "upper", "axis": [0.0, 1.0, 0.0], "origin": {"xyz": [0.1, 0.2, 0.3]}},
            {
                "name": "j2",
                "parent": "upper",
                "child": "fore",
                "axis": [1.0, 0.0, 0.0],
                "origin": {"xyz": [0.0, 0.0, -0.3], "rpy": [0.1, -0.2, 0.3]},
            },
        ],
        "thrusters": [
            {"name": "fore_jet", "link": "fore", "position": [0.02, 0.0, -0.25], "axis": [0.0, 0.0, 1.0], "max_thrust": 80.0, "max_rpm": 2e5},
            {"name": "base_jet", "link": "base", "position": [-0.1, 0.0, 0.0], "axis": [0.0, 0.6, 0.8], "max_thrust": 80.0, "max_rpm": 2e5},
        ],
    }


@pytest.fixture(scope="session")
def box():
    return mb.model_from_dict(box_model_dict())


@pytest.fixture(scope="session")
def arm2():
    return mb.model_from_dict(arm_model_dict())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_LINES] = []


@pytest.fixture
def acceptance(request):
    """Report one criterion: prints a PASS/FAIL line now and again in the session summary."""
    config = request.config
    reporter = config.pluginmanager.get_plugin("terminalreporter")

    def report(criterion, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  criterion {criterion}: {detail}"
        config.stash[ACCEPTANCE_LINES].append(line)
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
