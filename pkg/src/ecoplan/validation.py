"""Independent physics oracles.

Forward simulation of the continuous model, random feasible control
schedules (to bound the relaxed optimum from below), and the steady-cruise
speed that minimizes consumption per meter.
"""

from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np

from .model import EngineModel, Scenario, VehicleParams, drag_power, engine_rate, rolling_power
from .recovery import SIMULATED, Trajectory, check_feasibility
from .transcription import Grid

SEED_ENV = "ECOPLAN_SEED"
DEFAULT_SEED = 0
SUBSTEPS = 10
RETRIES = 3  # slower retries of a proposal that runs the store dry
REST = 1e-9  # J per kg of mass: below this the vehicle counts as standing
GRADING = 3
LAUNCH_REFINE = 4


@dataclass
class ControlSchedule:
    """Piecewise-constant drive and brake power on the intervals of ``t``."""

    t: np.ndarray
    P_drv: np.ndarray
    P_brk: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.P_drv = np.asarray(self.P_drv, dtype=float)
        self.P_brk = np.asarray(self.P_brk, dtype=float)
        n = self.t.size - 1
        if n < 1 or self.P_drv.shape != (n,) or self.P_brk.shape != (n,):
            raise ValueError("schedule needs N+1 times and N drive/brake values")
        if np.any(np.diff(self.t) <= 0.0):
            raise ValueError("schedule times must be strictly increasing")
        if not (np.all(np.isfinite(self.P_drv)) and np.all(np.isfinite(self.P_brk))):
            raise ValueError("schedule powers must be finite")
        bad = np.flatnonzero(self.P_brk < 0.0)
        if bad.size:
            j = int(bad[0])
            raise ValueError(f"brake power must be nonnegative (interval {j}: {self.P_brk[j]} W)")

    @property
    def N(self) -> int:
        return self.t.size - 1

    @property
    def T(self) -> float:
        return float(self.t[-1] - self.t[0])

    @classmethod
    def from_trajectory(cls, traj: Trajectory) -> "ControlSchedule":
        brake = np.zeros_like(traj.P_drv) if traj.P_brk is None else np.maximum(traj.P_brk, 0.0)
        return cls(traj.t.copy(), traj.P_drv.copy(), brake)

    def grid(self, rtol: float = 1e-9) -> Grid:
        """The uniform grid these controls live on."""
        if abs(self.t[0]) > rtol * max(1.0, self.T):
            raise ValueError(f"controls must start at t = 0 (first time {self.t[0]})")
        grid = Grid(self.N, float(self.t[-1]))
        if np.max(np.abs(grid.t - self.t)) > rtol * max(1.0, self.T):
            raise ValueError("controls must be sampled on a uniform time grid")
        return grid

    def check(self, engine: EngineModel, rtol: float = 1e-9):
        slack = rtol * max(1.0, abs(engine.p_min), abs(engine.p_max) if math.isfinite(engine.p_max) else 1.0)
        bad = np.flatnonzero((self.P_drv < engine.p_min - slack) | (self.P_drv > engine.p_max + slack))
        if bad.size:
            j = int(bad[0])
            raise ValueError(
                f"drive power {self.P_drv[j]} W on interval {j} outside the engine domain "
                f"[{engine.p_min}, {engine.p_max}]"
            )


# --------------------------------------------------------------------------
# Forward simulation
# --------------------------------------------------------------------------


class _Plant:
    """Right-hand side of the continuous model for one scenario."""

    def __init__(self, scenario: Scenario):
        veh = scenario.vehicle
        self.m = veh.m
        self.c = veh.drag_coefficient
        self.crr = veh.C_rr
        self.engine = scenario.engine
        self.solar = scenario.solar
        self.terrain = scenario.terrain

    def loss(self, K):
        u = 2.0 * K / self.m
        return self.c * u * math.sqrt(u) + self.crr * u

    def step(self, t0, h, x, K, E, P, B, substeps):
        """RK4 over ``[t0, t0 + h]`` with constant controls; returns ``(x, K, E, shed)``."""
        f = float(self.engine.rate(P))
        if K <= REST * self.m:
            # launching from rest makes v ~ sqrt(t); a finer graded mesh keeps RK4 accurate
            substeps *= LAUNCH_REFINE
            frac = (np.arange(substeps + 1) / substeps) ** GRADING
        else:
            frac = np.arange(substeps + 1) / substeps
        edges = t0 + h * frac
        steps = np.diff(edges).tolist()
        # signal values at every stage time: start, midpoint, end of each substep
        stages = np.empty(2 * substeps + 1)
        stages[0::2] = edges
        stages[1::2] = 0.5 * (edges[:-1] + edges[1:])
        dist = np.asarray(self.terrain(stages), float).tolist()
        sun = np.asarray(self.solar(stages), float).tolist()
        shed = 0.0
        m, c, crr = self.m, self.c, self.crr
        sqrt = math.sqrt
        for i in range(substeps):
            i0, i1, i2 = 2 * i, 2 * i + 1, 2 * i + 2
            dt = steps[i]
            K1 = K if K > 0.0 else 0.0
            u = 2.0 * K1 / m
            su = sqrt(u)
            va, ka = su, P - (c * u * su + crr * u) - B + dist[i0]
            K2 = K + 0.5 * dt * ka
            K2 = K2 if K2 > 0.0 else 0.0
            u = 2.0 * K2 / m
            su = sqrt(u)
            vb, kb = su, P - (c * u * su + crr * u) - B + dist[i1]
            K3 = K + 0.5 * dt * kb
            K3 = K3 if K3 > 0.0 else 0.0
            u = 2.0 * K3 / m
            su = sqrt(u)
            vc, kc = su, P - (c * u * su + crr * u) - B + dist[i1]
            K4 = K + dt * kc
            K4 = K4 if K4 > 0.0 else 0.0
            u = 2.0 * K4 / m
            su = sqrt(u)
            vd, kd = su, P - (c * u * su + crr * u) - B + dist[i2]
            x += dt / 6.0 * (va + 2.0 * vb + 2.0 * vc + vd)
            K += dt / 6.0 * (ka + 2.0 * kb + 2.0 * kc + kd)
            E += dt / 6.0 * ((sun[i0] - f) + 2.0 * (sun[i1] - f) + 2.0 * (sun[i1] - f) + (sun[i2] - f))
            if K < 0.0:
                # braking past standstill: the excess is dissipated, not stored
                shed -= K
                K = 0.0
        return x, K, E, shed


def simulate_forward(schedule: ControlSchedule, scenario: Scenario,
                     substeps: int = SUBSTEPS) -> Trajectory:
    """Integrate the original (unrelaxed) model under ``schedule``.

    Classical RK4 with ``substeps`` fixed steps per control interval.
    Kinetic energy is clamped at zero; the clamped amount is returned as
    ``shed_energy``. Constraint violations are not checked here.
    """
    if substeps < 1:
        raise ValueError("substeps must be at least 1")
    grid = schedule.grid()
    schedule.check(scenario.engine)
    plant = _Plant(scenario)
    N, h = grid.N, grid.h
    t = grid.t
    x = np.empty(N + 1)
    K = np.empty(N + 1)
    E = np.empty(N + 1)
    x[0], K[0], E[0] = scenario.x_init, scenario.K_init, scenario.E_init
    shed = 0.0
    for j in range(N):
        x[j + 1], K[j + 1], E[j + 1], s = plant.step(
            t[j], h, x[j], K[j], E[j], schedule.P_drv[j], schedule.P_brk[j], substeps)
        shed += s
    v = np.sqrt(2.0 * K / scenario.vehicle.m)
    return Trajectory(grid, x, v, K, E, schedule.P_drv.copy(), schedule.P_brk.copy(), SIMULATED, shed)


# --------------------------------------------------------------------------
# Random feasible schedules
# --------------------------------------------------------------------------


def resolve_seed(seed: Optional[int]) -> int:
    """Explicit seed, else the ``ECOPLAN_SEED`` environment variable, else 0."""
    if seed is not None:
        return int(seed)
    env = os.environ.get(SEED_ENV)
    if env is None or env.strip() == "":
        return DEFAULT_SEED
    try:
        return int(env)
    except ValueError as exc:
        raise ValueError(f"{SEED_ENV} must be an integer, got {env!r}") from exc


def _speed_profiles(scenario: Scenario, grid: Grid, rng: np.random.Generator) -> List[np.ndarray]:
    """Random speed targets inside the band that cover the trip, fastest first.

    One random shape is drawn; the first target adds a random speed-up over
    the slowest covering version of it and each later one halves that
    speed-up. Empty when the shape cannot cover the trip.
    """
    t = grid.t
    h = grid.h
    vmin = np.asarray(scenario.v_min(t), float)
    vmax = np.asarray(scenario.v_max(t), float)
    amax = np.asarray(scenario.a_max(t), float)
    knots = rng.uniform(0.0, 1.0, size=int(rng.integers(2, 8)))
    shape = np.interp(t / grid.T, np.linspace(0.0, 1.0, knots.size), knots)
    width = rng.uniform(0.0, 1.0)
    accel = rng.uniform(0.3, 0.9)
    margin = rng.uniform(0.001, 0.05)
    pinned = np.abs(vmax - vmin) <= 1e-12 * np.maximum(vmax, 1.0)

    def profile(b):
        theta = b + (1.0 - b) * width * shape
        target = vmin + theta * (vmax - vmin) * (1.0 - 1e-3)
        target[pinned] = vmax[pinned]
        v = np.empty_like(target)
        v[0] = scenario.v_init
        for k in range(grid.N):
            v[k + 1] = min(target[k + 1], v[k] + accel * amax[k + 1] * h)
        return v

    goal = (scenario.x_end - scenario.x_init) * (1.0 + margin)

    def distance(v):
        return h * float(np.sum(0.5 * (v[:-1] + v[1:])))

    if distance(profile(1.0)) < goal:
        return []
    lo, hi = 0.0, 1.0
    if distance(profile(0.0)) < goal:
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            if distance(profile(mid)) >= goal:
                hi = mid
            else:
                lo = mid
    else:
        hi = 0.0
    extra = rng.uniform(0.0, 0.3) * (1.0 - hi)
    out = []
    for k in range(RETRIES + 1):
        v = profile(hi + extra * 0.5**k)
        if np.all(v >= vmin - 1e-12 * np.maximum(vmax, 1.0)):
            out.append(v)
    return out


def _track(scenario: Scenario, grid: Grid, v_target: np.ndarray, substeps: int) -> ControlSchedule:
    """Controls that make the simulated speed hit ``v_target`` at every node."""
    plant = _Plant(scenario)
    eng = scenario.engine
    m = scenario.vehicle.m
    N, h = grid.N, grid.h
    t = grid.t
    Kt = 0.5 * m * v_target**2
    P = np.empty(N)
    B = np.empty(N)
    x, K, E = scenario.x_init, scenario.K_init, scenario.E_init

    def split(u):
        if u >= eng.p_min:
            return min(u, eng.p_max), 0.0
        return eng.p_min, eng.p_min - u

    for j in range(N):
        def reach(u):
            p, b = split(u)
            return plant.step(t[j], h, x, K, E, p, b, substeps)[1]

        d = float(scenario.terrain(t[j] + 0.5 * h))
        u0 = (Kt[j + 1] - K) / h + 0.5 * (plant.loss(K) + plant.loss(Kt[j + 1])) - d
        r0 = reach(u0) - Kt[j + 1]
        u1 = u0 - r0 / h
        tol = 1e-13 * max(Kt[j + 1], 0.5 * m)
        for _ in range(6):
            if abs(r0) <= tol:
                u1 = u0
                break
            r1 = reach(u1) - Kt[j + 1]
            if abs(r1) <= tol or r1 == r0:
                break
            u0, u1, r0 = u1, u1 - r1 * (u1 - u0) / (r1 - r0), r1
        P[j], B[j] = split(u1)
        x, K, E, _ = plant.step(t[j], h, x, K, E, P[j], B[j], substeps)
    return ControlSchedule(t, P, B)


def random_feasible_schedules(scenario: Scenario, count: int, seed: Optional[int] = None,
                              N: int = 100, max_attempts: Optional[int] = None,
                              substeps: int = SUBSTEPS) -> List[Tuple[ControlSchedule, Trajectory]]:
    """Draw feasible control schedules and their simulated trajectories.

    Each proposal picks a random speed target inside the speed band (steered
    to cover the trip, ramped below the acceleration limit) and the
    piecewise-constant controls that track it. A proposal that only empties
    the energy store is retried a few times with a smaller speed-up over the
    slowest covering profile. A schedule is kept only if its simulation
    passes :func:`check_feasibility`, so the result is a sample of feasible
    points of the original problem. Deterministic given ``seed``
    (default from ``ECOPLAN_SEED``).
    """
    rng = np.random.default_rng(resolve_seed(seed))
    grid = Grid(int(N), float(scenario.T))
    attempts = max_attempts if max_attempts is not None else 20 * count
    out: List[Tuple[ControlSchedule, Trajectory]] = []
    for _ in range(attempts):
        if len(out) >= count:
            break
        for v in _speed_profiles(scenario, grid, rng):
            schedule = _track(scenario, grid, v, substeps)
            traj = simulate_forward(schedule, scenario, substeps)
            report = check_feasibility(traj, scenario)
            if report.passed:
                out.append((schedule, traj))
                break
            if set(report.failures()) != {"energy_box"}:
                # only a store that runs dry is helped by driving slower
                break
    if len(out) < count:
        warnings.warn(f"only {len(out)} of {count} feasible schedules after {attempts} proposals",
                      RuntimeWarning, stacklevel=2)
    return out


# --------------------------------------------------------------------------
# Cruise oracle
# --------------------------------------------------------------------------


def golden_section(f: Callable[[float], float], a: float, b: float, tol: float,
                   max_iter: int = 200) -> Tuple[float, float]:
    """Minimize a unimodal ``f`` on ``[a, b]`` to a bracket of width ``tol``."""
    if not b > a:
        raise ValueError("golden section needs a < b")
    if not tol > 0.0:
        raise ValueError("tolerance must be positive")
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


def consumption_per_meter(vehicle: VehicleParams, engine: EngineModel, v):
    """Steady-state internal energy spent per meter at constant speed ``v`` (J/m)."""
    v = np.asarray(v, dtype=float)
    P = drag_power(vehicle, v) + rolling_power(vehicle, v)
    return engine_rate(engine, P) / v


def cruise_oracle(vehicle: VehicleParams, engine: EngineModel,
                  bracket: Tuple[float, float] = (0.5, 80.0), tol: float = 1e-4) -> float:
    """Constant speed minimizing consumption per meter (m/s)."""
    lo, hi = bracket
    v, _ = golden_section(lambda s: float(consumption_per_meter(vehicle, engine, s)), lo, hi, tol)
    if v - lo <= 2.0 * tol or hi - v <= 2.0 * tol:
        raise ValueError(f"bracket [{lo}, {hi}] does not contain an interior minimum (v = {v})")
    return float(v)
