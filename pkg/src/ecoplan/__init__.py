"""Energy-optimal and time-optimal speed profiles along a fixed path.

The fixed-horizon problem is solved through a convex relaxation (kinetic
energy and engine balance as inequalities) with a log-barrier interior-point
method, then mapped back to a physically consistent trajectory.
"""

from .model import (PiecewiseLinearEngine, QuadraticEngine, Scenario, ScenarioError, Signal,
                    VehicleParams, validate)
from .planner import ParetoPoint, Plan, min_energy, min_time, pareto, plan_fixed_T
from .recovery import Trajectory, check_feasibility, recover
from .solver import SolveReport, SolverSettings, assess_feasibility, solve, warm_start
from .transcription import transcribe
from .validation import ControlSchedule, cruise_oracle, random_feasible_schedules, simulate_forward

__version__ = "0.1.0"

__all__ = [
    "ControlSchedule", "ParetoPoint", "PiecewiseLinearEngine", "Plan", "QuadraticEngine",
    "Scenario", "ScenarioError", "Signal", "SolveReport", "SolverSettings", "Trajectory",
    "VehicleParams", "assess_feasibility", "check_feasibility", "cruise_oracle", "min_energy",
    "min_time", "pareto", "plan_fixed_T", "random_feasible_schedules", "recover",
    "simulate_forward", "solve", "transcribe", "validate", "warm_start",
]
