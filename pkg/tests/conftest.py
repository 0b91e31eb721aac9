import math
import sys

import pytest

from ecoplan.files import load_bundled
from ecoplan.model import QuadraticEngine, Scenario, Signal, VehicleParams

VEHICLE = VehicleParams(m=1500.0, rho=1.22, A=2.3, C_D=0.35, C_rr=5.0)
ENGINE = QuadraticEngine(alpha=0.005e-3, beta=1.0, gamma=5e3)


def flat_scenario(T=60.0, x_end=600.0, v_init=0.0, v_min=0.0, v_max=25.0, a_max=1.5,
                  E_init=2e6, E_min=0.0, E_max=None, engine=ENGINE, **extra) -> Scenario:
    """Flat road with constant limits, handy for closed-form checks."""
    return Scenario(
        vehicle=VEHICLE, engine=engine, T=T, x_init=0.0, x_end=x_end, v_init=v_init,
        E_init=E_init, E_min=E_min, E_max=E_init if E_max is None else E_max,
        v_min=Signal.constant(v_min), v_max=Signal.constant(v_max),
        a_max=Signal.constant(a_max), **extra)


@pytest.fixture
def flat():
    return flat_scenario()


@pytest.fixture(scope="session")
def bundled():
    return {name: load_bundled(name) for name in ("paperlike", "pinned", "cruise", "energy_limited")}


def approx_rel(a, b, rel):
    return abs(a - b) <= rel * max(abs(a), abs(b), 1e-300)


def isclose(a, b, rel=1e-9):
    return math.isclose(a, b, rel_tol=rel)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
