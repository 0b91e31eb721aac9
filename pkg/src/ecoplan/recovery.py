"""Map a relaxed solution back to a physically consistent trajectory.

The relaxed problem only asks ``K >= m v^2 / 2`` and lets the engine burn
more energy than the drive power needs. Rebuilding speed from kinetic
energy and drive power from the consumed energy, and reading the brake
power off the kinetic-energy balance, gives a point of the original
problem with the same terminal energy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .model import Scenario, loss_power_from_K
from .transcription import Grid, Scales, scales_for

RELAXED = "relaxed"
RECOVERED = "recovered"
SIMULATED = "simulated"


class RecoveryError(ValueError):
    """The relaxed input is too far outside the relaxed feasible set."""


@dataclass
class Trajectory:
    grid: Grid
    x: np.ndarray
    v: np.ndarray
    K: np.ndarray
    E: np.ndarray
    P_drv: np.ndarray
    P_brk: Optional[np.ndarray] = None
    kind: str = RELAXED
    shed_energy: float = 0.0

    @property
    def t(self) -> np.ndarray:
        return self.grid.t

    @property
    def consumption(self) -> float:
        return float(self.E[0] - self.E[-1])

    def copy(self) -> "Trajectory":
        return Trajectory(
            self.grid, self.x.copy(), self.v.copy(), self.K.copy(), self.E.copy(),
            self.P_drv.copy(), None if self.P_brk is None else self.P_brk.copy(),
            self.kind, self.shed_energy,
        )


def cumulative_trapezoid(v: np.ndarray, h: float, x0: float) -> np.ndarray:
    x = np.empty_like(v)
    x[0] = x0
    x[1:] = x0 + h * np.cumsum(0.5 * (v[:-1] + v[1:]))
    return x


def _interval_signals(scenario: Scenario, grid: Grid):
    tm = grid.midpoints
    return np.asarray(scenario.solar(tm), float), np.asarray(scenario.terrain(tm), float)


def recover(relaxed: Trajectory, scenario: Scenario, tol: float = 1e-6) -> Trajectory:
    """Rebuild ``(x, v, P_drv, P_brk)`` from the relaxed ``K`` and ``E`` sequences.

    Only ``K`` and ``E`` are read; ``E`` and ``K`` are passed through untouched.
    """
    grid = relaxed.grid
    veh = scenario.vehicle
    eng = scenario.engine
    sc = scales_for(scenario)
    h = grid.h
    K = relaxed.K
    if np.any(K < -tol * sc.K):
        k = int(np.argmin(K))
        raise RecoveryError(f"negative kinetic energy K[{k}] = {K[k]}")
    Kc = np.maximum(K, 0.0)
    v = np.sqrt(2.0 * Kc / veh.m)
    x = cumulative_trapezoid(v, h, scenario.x_init)

    solar, terrain = _interval_signals(scenario, grid)
    q = solar - np.diff(relaxed.E) / h
    q_lo = float(eng.rate(eng.p_min))
    q_hi = float(eng.rate(eng.p_max)) if math.isfinite(eng.p_max) else math.inf
    slack = tol * sc.P
    if np.any(q < q_lo - slack) or np.any(q > q_hi + slack):
        j = int(np.argmax(np.maximum(q_lo - q, q - q_hi)))
        raise RecoveryError(
            f"consumption rate {q[j]} on interval {j} outside engine range [{q_lo}, {q_hi}]"
        )
    P_drv = eng.invert(np.clip(q, q_lo, q_hi))
    g = loss_power_from_K(veh, Kc)
    P_brk = P_drv - 0.5 * (g[:-1] + g[1:]) + terrain - np.diff(K) / h
    return Trajectory(grid, x, v, K.copy(), relaxed.E.copy(), P_drv, P_brk, RECOVERED)


# --------------------------------------------------------------------------
# Feasibility certificate
# --------------------------------------------------------------------------


@dataclass
class Check:
    violation: float
    tolerance: float
    where: int = -1

    @property
    def passed(self) -> bool:
        return bool(self.violation <= self.tolerance)


@dataclass
class FeasibilityReport:
    checks: Dict[str, Check] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    @property
    def max_violation(self) -> float:
        return max(c.violation for c in self.checks.values())

    def failures(self) -> Dict[str, Check]:
        return {k: c for k, c in self.checks.items() if not c.passed}

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": {
                k: {"violation": c.violation, "tolerance": c.tolerance,
                    "passed": c.passed, "index": c.where}
                for k, c in self.checks.items()
            },
        }


def _worst(arr) -> Check:
    arr = np.asarray(arr, float)
    if arr.size == 0:
        return Check(0.0, 0.0)
    i = int(np.argmax(arr))
    return Check(max(float(arr[i]), 0.0), 0.0, i)


DEFAULT_TOLERANCE = 1e-6
DISCRETE_ONLY = ("dynamics", "energy_balance", "engine")


def check_feasibility(traj: Trajectory, scenario: Scenario,
                      tolerances: Optional[Dict[str, float]] = None) -> FeasibilityReport:
    """Maximum relative violation of every constraint of the original problem.

    Violations are normalized by characteristic scales (top speed, top
    kinetic energy, peak power, energy budget, trip length). Acceleration is
    checked on speeds and, separately, in the kinetic-energy form used by
    the transcription; for ``K = m v^2 / 2`` the two coincide.
    """
    sc: Scales = scales_for(scenario)
    grid = traj.grid
    h = grid.h
    t = grid.t
    veh = scenario.vehicle
    eng = scenario.engine
    tol = dict(tolerances or {})
    base = tol.pop("default", DEFAULT_TOLERANCE)

    vmin = np.asarray(scenario.v_min(t), float)
    vmax = np.asarray(scenario.v_max(t), float)
    amax = np.asarray(scenario.a_max(t), float)
    solar, terrain = _interval_signals(scenario, grid)
    x, v, K, E, P = traj.x, traj.v, traj.K, traj.E, traj.P_drv
    B = traj.P_brk if traj.P_brk is not None else np.zeros_like(P)
    Kc = np.maximum(K, 0.0)
    g = loss_power_from_K(veh, Kc)

    checks: Dict[str, Check] = {}
    init = np.array([
        abs(x[0] - scenario.x_init) / sc.x,
        abs(v[0] - scenario.v_init) / sc.v,
        abs(K[0] - scenario.K_init) / sc.K,
        abs(E[0] - scenario.E_init) / sc.E,
    ])
    checks["initial"] = _worst(init)
    checks["dynamics"] = _worst(np.abs(np.diff(x) - 0.5 * h * (v[:-1] + v[1:])) / sc.x)
    checks["speed_min"] = _worst((vmin - v) / sc.v)
    checks["speed_max"] = _worst((v - vmax) / sc.v)
    checks["acceleration"] = _worst((np.diff(v) - h * amax[1:]) / sc.v)
    checks["acceleration_kform"] = _worst(
        (np.diff(K) / h - amax[1:] * np.sqrt(0.5 * veh.m) * (np.sqrt(Kc[:-1]) + np.sqrt(Kc[1:]))) / sc.P)
    checks["kinetic_energy"] = _worst(np.abs(K - 0.5 * veh.m * v**2) / sc.K)
    checks["energy_balance"] = _worst(
        np.abs(np.diff(K) / h - (P - 0.5 * (g[:-1] + g[1:]) - B + terrain)) / sc.P)
    checks["brake_nonnegative"] = _worst(-B / sc.P)
    checks["drive_domain"] = _worst(np.maximum(eng.p_min - P, P - eng.p_max) / sc.P)
    f = eng.rate(np.clip(P, eng.p_min, eng.p_max))
    checks["engine"] = _worst(np.abs(f - (solar - np.diff(E) / h)) / sc.P)
    checks["energy_box"] = _worst(np.maximum(scenario.E_min - E, E - scenario.E_max) / sc.E)
    checks["terminal"] = _worst(np.array([(scenario.x_end - x[-1]) / sc.x]))

    if traj.kind == SIMULATED:
        # a simulated state obeys the continuous dynamics, not the discrete
        # trapezoid/averaged balances, so those residuals are not meaningful
        for name in DISCRETE_ONLY:
            del checks[name]
    for name, c in checks.items():
        c.tolerance = base
        if name in tol:
            c.tolerance = tol[name]
    unknown = set(tol) - set(checks) - set(DISCRETE_ONLY)
    if unknown:
        raise KeyError(f"unknown feasibility checks: {sorted(unknown)}")
    return FeasibilityReport(checks)
