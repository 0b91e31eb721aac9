"""Planning drivers: fixed horizon, minimum time, minimum energy, Pareto sweep."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .model import Scenario, validate
from .recovery import FeasibilityReport, Trajectory, check_feasibility, recover
from .solver import (INFEASIBLE, OPTIMAL, SolveReport, SolverSettings, assess_feasibility, solve,
                     warm_start)
from .transcription import transcribe
from .validation import golden_section

BISECTION = "bisection"
SCAN = "scan"
GOLDEN = "golden-section"
BOUND = "lower-bound"


class PlanError(RuntimeError):
    """A plan that the solver calls optimal failed the feasibility certificate."""

    def __init__(self, message: str, plan: "Plan"):
        super().__init__(message)
        self.plan = plan


class SearchError(RuntimeError):
    """A horizon search could not find any feasible horizon."""


@dataclass
class Plan:
    scenario: Scenario
    N: int
    report: SolveReport
    relaxed: Optional[Trajectory] = None
    trajectory: Optional[Trajectory] = None
    feasibility: Optional[FeasibilityReport] = None

    @property
    def status(self) -> str:
        return self.report.status

    @property
    def optimal(self) -> bool:
        return self.report.status == OPTIMAL and self.trajectory is not None

    @property
    def T(self) -> float:
        return self.scenario.T

    @property
    def consumption(self) -> float:
        return self.trajectory.consumption if self.trajectory is not None else math.nan


def plan_fixed_T(scenario: Scenario, N: int, settings: Optional[SolverSettings] = None,
                 T: Optional[float] = None, start: Optional[Trajectory] = None,
                 tolerances: Optional[Dict[str, float]] = None) -> Plan:
    """Transcribe, solve, recover and certify the energy-optimal plan at horizon ``T``.

    Solver statuses other than optimal are returned in the plan (without a
    trajectory). An optimal solve whose recovered trajectory fails the
    feasibility check raises :class:`PlanError`.
    """
    sc = validate(scenario.with_horizon(T) if T is not None else scenario)
    problem = transcribe(sc, N)
    z0 = warm_start(problem, start, settings) if start is not None else None
    relaxed, report = solve(problem, settings, start=z0)
    plan = Plan(sc, int(N), report, relaxed)
    if report.status != OPTIMAL:
        return plan
    plan.trajectory = recover(relaxed, sc)
    plan.feasibility = check_feasibility(plan.trajectory, sc, tolerances)
    if not plan.feasibility.passed:
        bad = ", ".join(f"{k}={c.violation:.3g}" for k, c in plan.feasibility.failures().items())
        raise PlanError(f"recovered trajectory fails the feasibility check at T = {sc.T}: {bad}", plan)
    return plan


# --------------------------------------------------------------------------
# Minimum time
# --------------------------------------------------------------------------


@dataclass
class SearchResult:
    T: float
    plan: Plan
    mode: str
    history: List[dict] = field(default_factory=list)
    bracket: Tuple[float, float] = (math.nan, math.nan)
    message: str = ""

    def to_dict(self) -> dict:
        return {"T_s": self.T, "mode": self.mode, "bracket_s": list(self.bracket),
                "consumption_J": self.plan.consumption, "status": self.plan.status,
                "message": self.message, "history": self.history}


def kinematic_lower_bound(scenario: Scenario) -> float:
    """Trip length over the largest speed limit: no plan can be faster."""
    vpeak = max(scenario.v_max.values)
    if not vpeak > 0.0:
        return math.inf
    return (scenario.x_end - scenario.x_init) / vpeak


def _probe(scenario: Scenario, N: int, T: float, settings, history: List[dict], phase: str) -> bool:
    sc = scenario.with_horizon(T)
    feas = assess_feasibility(transcribe(sc, N), settings, early=True)
    history.append({"phase": phase, "T_s": float(T), "feasible": bool(feas.feasible),
                    "margin": float(feas.margin), "status": feas.status,
                    "certified": bool(feas.certified)})
    return bool(feas.feasible)


def _final_plan(scenario, N, settings, T, step, history, attempts=5) -> Tuple[float, Plan]:
    """Plan at ``T``; nudges ``T`` up by ``step`` while the solve is not optimal."""
    plan = None
    for _ in range(attempts):
        plan = plan_fixed_T(scenario, N, settings, T=T)
        history.append({"phase": "verify", "T_s": float(T), "status": plan.status})
        if plan.optimal:
            return T, plan
        T += step
    raise SearchError(f"no optimal plan near the feasibility boundary (last status {plan.status})")


def scan_min_time(scenario: Scenario, N: int, t_lo: float, t_hi: float, step: float,
                  settings: Optional[SolverSettings] = None,
                  history: Optional[List[dict]] = None) -> Optional[float]:
    """First feasible horizon on the grid ``t_lo, t_lo + step, ...`` up to ``t_hi``."""
    history = [] if history is None else history
    n = int(math.floor((t_hi - t_lo) / step + 1e-9))
    for k in range(n + 1):
        T = t_lo + k * step
        if T > 0.0 and _probe(scenario, N, T, settings, history, SCAN):
            return T
    return None


def min_time(scenario: Scenario, N: int, settings: Optional[SolverSettings] = None,
             t_tolerance: float = 0.1, T_hi: Optional[float] = None,
             T_cap: Optional[float] = None, growth: float = 1.25) -> SearchResult:
    """Smallest horizon for which the fixed-horizon problem is feasible.

    Brackets upward from the kinematic lower bound by factors of ``growth``
    (or starts from a caller-supplied feasible ``T_hi``), then bisects on
    the phase-I feasibility sign until the bracket is ``t_tolerance`` wide.
    One probe above the first feasible horizon guards against feasibility
    not being an interval in ``T``; when it flips back to infeasible the
    search falls back to a scan at ``t_tolerance`` steps.
    """
    if not t_tolerance > 0.0:
        raise ValueError("t_tolerance must be positive")
    history: List[dict] = []
    T_lo = kinematic_lower_bound(scenario)
    if not math.isfinite(T_lo):
        raise SearchError("the speed limit is zero everywhere; the trip cannot be made")
    cap = T_cap if T_cap is not None else T_lo * 2.0**12

    if _probe(scenario, N, T_lo, settings, history, "bracket"):
        T, plan = _final_plan(scenario, N, settings, T_lo, t_tolerance, history)
        return SearchResult(T, plan, BOUND, history, (T_lo, T_lo))

    lo = T_lo
    if T_hi is not None:
        if not _probe(scenario, N, T_hi, settings, history, "bracket"):
            raise SearchError(f"supplied upper horizon T_hi = {T_hi} is infeasible")
        hi = float(T_hi)
    else:
        hi = None
        T = T_lo
        while T < cap:
            T = min(T * growth, cap)
            if _probe(scenario, N, T, settings, history, "bracket"):
                hi = T
                break
            lo = T
        if hi is None:
            raise SearchError(f"no feasible horizon up to T_cap = {cap}")
        guard = hi * growth
        if not _probe(scenario, N, guard, settings, history, "guard"):
            msg = (f"feasible at T = {hi} but infeasible at T = {guard}: "
                   "feasibility is not an interval, scanning instead")
            found = scan_min_time(scenario, N, T_lo, hi, t_tolerance, settings, history)
            if found is None:
                raise SearchError(msg + "; the scan found no feasible horizon")
            T, plan = _final_plan(scenario, N, settings, found, t_tolerance, history)
            return SearchResult(T, plan, SCAN, history, (T - t_tolerance, T), msg)

    while hi - lo > t_tolerance:
        mid = 0.5 * (lo + hi)
        if _probe(scenario, N, mid, settings, history, BISECTION):
            hi = mid
        else:
            lo = mid
    T, plan = _final_plan(scenario, N, settings, hi, t_tolerance, history)
    return SearchResult(T, plan, BISECTION, history, (lo, hi))


# --------------------------------------------------------------------------
# Minimum energy
# --------------------------------------------------------------------------


def max_feasible_T(scenario: Scenario, N: int, T_from: float, settings: Optional[SolverSettings] = None,
                   t_tolerance: float = 1.0, max_doublings: int = 10,
                   history: Optional[List[dict]] = None) -> float:
    """Largest feasible horizon above the feasible ``T_from`` (doubling, then bisection).

    Idle consumption eventually drains the store, so long horizons become
    infeasible. If none is found after ``max_doublings`` the last probe is
    returned.
    """
    history = [] if history is None else history
    lo = float(T_from)
    hi = None
    for _ in range(max_doublings):
        T = 2.0 * lo
        if _probe(scenario, N, T, settings, history, "cap"):
            lo = T
        else:
            hi = T
            break
    if hi is None:
        return lo
    tol = max(t_tolerance, 1e-3 * lo)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _probe(scenario, N, mid, settings, history, "cap"):
            lo = mid
        else:
            hi = mid
    return lo


class _Curve:
    """Cached optimal consumption as a function of the horizon."""

    def __init__(self, scenario, N, settings, history):
        self.scenario = scenario
        self.N = N
        self.settings = settings
        self.history = history
        self.cache: Dict[float, Tuple[float, Optional[Trajectory]]] = {}

    def _neighbor(self, T) -> Optional[Trajectory]:
        done = [(abs(k - T), k) for k, (_, r) in self.cache.items() if r is not None]
        return self.cache[min(done)[1]][1] if done else None

    def __call__(self, T: float) -> float:
        T = float(T)
        if T not in self.cache:
            sc = self.scenario.with_horizon(T)
            problem = transcribe(sc, self.N)
            prev = self._neighbor(T)
            z0 = warm_start(problem, prev, self.settings) if prev is not None else None
            relaxed, report = solve(problem, self.settings, start=z0)
            ok = report.status == OPTIMAL
            value = sc.E_init - report.objective if ok else math.inf
            self.cache[T] = (value, relaxed if ok else None)
            self.history.append({"phase": "evaluate", "T_s": T, "status": report.status,
                                 "consumption_J": value if ok else None})
        return self.cache[T][0]

    def best(self, lo=-math.inf, hi=math.inf) -> Tuple[float, float]:
        pts = [(v, T) for T, (v, _) in self.cache.items() if lo <= T <= hi]
        v, T = min(pts)
        return T, v


def unimodality_violations(values: Sequence[float], tol: float) -> int:
    """Interior humps (a point above both neighbours by more than ``tol``).

    A unimodal consumption curve decreases then increases, so any
    increase-then-decrease triple is a violation.
    """
    c = np.asarray(values, float)
    count = 0
    for i in range(1, c.size - 1):
        if c[i] > c[i - 1] + tol and c[i] > c[i + 1] + tol:
            count += 1
    return count


def min_energy(scenario: Scenario, N: int, settings: Optional[SolverSettings] = None,
               t_tolerance: float = 0.5, T_star: Optional[float] = None,
               T_cap: Optional[float] = None, probe_points: int = 9,
               scan_points: int = 200) -> SearchResult:
    """Horizon that minimizes optimal consumption over ``[T_star, T_cap]``.

    A coarse probe of ``probe_points`` horizons checks unimodality; if it
    holds, golden-section search refines around the best probe to
    ``t_tolerance``, otherwise the optimum of a ``scan_points`` scan is
    returned.
    """
    if not t_tolerance > 0.0:
        raise ValueError("t_tolerance must be positive")
    history: List[dict] = []
    if T_star is None:
        T_star = min_time(scenario, N, settings, t_tolerance).T
    if T_cap is None:
        T_cap = max_feasible_T(scenario, N, T_star, settings, t_tolerance, history=history)
    if not T_cap > T_star:
        raise SearchError(f"empty horizon window [{T_star}, {T_cap}]")

    curve = _Curve(scenario, N, settings, history)
    probes = np.linspace(T_star, T_cap, probe_points)
    values = [curve(T) for T in probes]
    if not np.any(np.isfinite(values)):
        raise SearchError("no horizon in the window solved to optimality")
    noise = 1e-7 * max(abs(scenario.E_init), 1.0)
    finite = np.isfinite(values)
    violations = unimodality_violations(np.asarray(values)[finite], noise)
    if violations or not np.all(finite):
        msg = f"unimodality probe failed ({violations} humps); scan fallback"
        for T in np.linspace(T_star, T_cap, scan_points):
            curve(T)
        T_opt, _ = curve.best()
        mode = SCAN
        bracket = (T_star, T_cap)
    else:
        msg = ""
        i = int(np.argmin(values))
        a = probes[max(i - 1, 0)]
        b = probes[min(i + 1, probe_points - 1)]
        golden_section(curve, a, b, t_tolerance)
        T_opt, _ = curve.best(a, b)
        mode = GOLDEN
        bracket = (float(a), float(b))
    plan = plan_fixed_T(scenario, N, settings, T=T_opt, start=curve.cache[T_opt][1])
    return SearchResult(float(T_opt), plan, mode, history, bracket, msg)


# --------------------------------------------------------------------------
# Pareto sweep
# --------------------------------------------------------------------------


@dataclass
class ParetoPoint:
    T: float
    consumption: float
    status: str
    path: Optional[str] = None
    plan: Optional[Plan] = None


def pareto(scenario: Scenario, N: int, settings: Optional[SolverSettings] = None,
           T_list: Sequence[float] = (), warm: bool = True,
           store: Optional[Callable[[Plan], str]] = None) -> List[ParetoPoint]:
    """Optimal consumption at each horizon of the ascending ``T_list``.

    Each solve is warm-started from the nearest previously completed
    horizon. ``store`` (if given) persists each optimal plan and returns
    the path recorded in the point.
    """
    T_list = [float(T) for T in T_list]
    if any(b <= a for a, b in zip(T_list, T_list[1:])):
        raise ValueError("T_list must be strictly ascending")
    out: List[ParetoPoint] = []
    prev: Optional[Trajectory] = None
    for T in T_list:
        try:
            plan = plan_fixed_T(scenario, N, settings, T=T, start=prev if warm else None)
        except PlanError as exc:
            out.append(ParetoPoint(T, math.nan, "feasibility-check-failed", None, exc.plan))
            continue
        if plan.optimal:
            prev = plan.relaxed
            path = store(plan) if store is not None else None
            out.append(ParetoPoint(T, plan.consumption, plan.status, path, plan))
        else:
            out.append(ParetoPoint(T, math.nan, plan.status, None, plan))
    return out


def is_infeasible(status: str) -> bool:
    return status == INFEASIBLE
