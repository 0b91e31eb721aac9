import math

import numpy as np
import pytest

from conftest import flat_scenario
from ecoplan.planner import (BISECTION, GOLDEN, SCAN, SearchError, kinematic_lower_bound,
                             max_feasible_T, min_energy, min_time, pareto, plan_fixed_T,
                             scan_min_time, unimodality_violations)
from ecoplan.solver import INFEASIBLE

# accelerate at 1.5 m/s^2 to 25 m/s, then cruise the remaining distance
T_CLOSED = 600.0 / 25.0 + 25.0 / (2.0 * 1.5)


def test_kinematic_lower_bound():
    assert kinematic_lower_bound(flat_scenario()) == pytest.approx(24.0)
    assert kinematic_lower_bound(flat_scenario(v_max=0.0)) == math.inf


def test_plan_fixed_horizon_is_certified(flat):
    plan = plan_fixed_T(flat, 100)
    assert plan.optimal
    assert plan.feasibility.passed
    assert plan.consumption == pytest.approx(flat.E_init - plan.trajectory.E[-1])


def test_horizon_below_min_time_is_infeasible():
    sc = flat_scenario(E_init=1e9)
    plan = plan_fixed_T(sc, 100, T=28.0)
    assert plan.status == INFEASIBLE
    assert plan.trajectory is None and math.isnan(plan.consumption)


@pytest.mark.parametrize("N", [100, 200])
def test_min_time_matches_closed_form(N):
    res = min_time(flat_scenario(E_init=1e9), N, t_tolerance=0.05)
    assert res.mode == BISECTION
    assert res.plan.optimal
    assert res.bracket[1] - res.bracket[0] <= 0.05
    assert abs(res.T - T_CLOSED) <= 0.05


def test_min_time_matches_scan():
    sc = flat_scenario(E_init=1e9)
    res = min_time(sc, 100, t_tolerance=0.1)
    t0 = math.floor(res.T) - 1.0
    found = scan_min_time(sc, 100, t0, t0 + 3.0, 0.1)
    assert found is not None
    assert abs(found - res.T) <= 0.2


def test_min_time_energy_limited_depletes_store():
    # barely enough stored energy: the fastest plan is energy-bound, not speed-bound
    sc = flat_scenario(E_init=600e3)
    # leftover energy shrinks with the bracket width; 0.01 s keeps it well below 1e-3
    res = min_time(sc, 100, t_tolerance=0.01)
    assert res.T > T_CLOSED + 1.0
    assert (res.plan.trajectory.E[-1] - sc.E_min) / sc.E_init <= 1e-3


def test_min_time_reports_hopeless_trip():
    with pytest.raises(SearchError):
        min_time(flat_scenario(E_init=1e3), 50, T_cap=200.0)
    with pytest.raises(SearchError):
        min_time(flat_scenario(v_max=0.0), 50)
    with pytest.raises(ValueError):
        min_time(flat_scenario(), 50, t_tolerance=0.0)


def test_min_time_rejects_infeasible_upper_horizon():
    with pytest.raises(SearchError):
        min_time(flat_scenario(E_init=1e9), 50, T_hi=26.0)


def test_optimal_plan_coasts_at_the_end():
    sc = flat_scenario(T=60.0)
    plan = plan_fixed_T(sc, 200)
    traj = plan.trajectory
    # coasting: the engine idles at its lower power limit while the car slows
    idle = traj.P_drv <= sc.engine.p_min + 1e-3 * abs(traj.P_drv).max()
    tail = np.flatnonzero(~idle)
    last_drive = tail[-1] + 1 if tail.size else 0
    N = traj.grid.N
    assert (N - last_drive) / N >= 0.05
    assert traj.v[-1] < traj.v[last_drive]


def test_unimodality_violations():
    assert unimodality_violations([5, 4, 3, 4, 5], 0.0) == 0
    assert unimodality_violations([5, 4, 6, 3, 5], 0.0) == 1
    assert unimodality_violations([5, 4, 6, 3, 5], 2.0) == 0
    assert unimodality_violations([1, 3, 1, 3, 1], 0.0) == 2
    assert unimodality_violations([1.0], 0.0) == 0


def test_max_feasible_horizon_brackets_idle_drain():
    # idle burns 5 kW, so 2 MJ cannot last much more than 400 s
    sc = flat_scenario(E_init=2e6)
    T_cap = max_feasible_T(sc, 50, 60.0, t_tolerance=1.0)
    assert 60.0 < T_cap < 2e6 / 5e3
    assert plan_fixed_T(sc, 50, T=T_cap).optimal
    assert plan_fixed_T(sc, 50, T=T_cap * 1.05).status == INFEASIBLE


def test_min_energy_matches_dense_scan():
    sc = flat_scenario(x_end=2000.0, E_init=1e9)
    N, tol = 50, 0.5
    T_star = min_time(sc, N, t_tolerance=0.1).T
    T_cap = 400.0
    res = min_energy(sc, N, t_tolerance=tol, T_star=T_star, T_cap=T_cap)
    assert res.mode == GOLDEN
    assert res.plan.optimal
    grid = np.linspace(T_star, T_cap, 200)
    values = [plan_fixed_T(sc, N, T=T).consumption for T in grid]
    T_scan = grid[int(np.argmin(values))]
    step = grid[1] - grid[0]
    assert abs(res.T - T_scan) <= 2.0 * tol + step
    assert res.plan.consumption <= min(values) * (1.0 + 1e-6)


def test_min_energy_scan_fallback_on_bumpy_curve(monkeypatch):
    import ecoplan.planner as planner

    calls = {"n": 0}

    def bumpy(values, tol):
        calls["n"] += 1
        return 1

    monkeypatch.setattr(planner, "unimodality_violations", bumpy)
    sc = flat_scenario(x_end=2000.0, E_init=1e9)
    res = min_energy(sc, 20, t_tolerance=1.0, T_star=90.0, T_cap=300.0, scan_points=15)
    assert calls["n"] == 1
    assert res.mode == SCAN
    assert "scan" in res.message
    evaluated = [h for h in res.history if h["phase"] == "evaluate"]
    assert len(evaluated) >= 15


def test_min_energy_rejects_empty_window():
    with pytest.raises(SearchError):
        min_energy(flat_scenario(), 50, T_star=100.0, T_cap=100.0)


def test_pareto_warm_matches_cold():
    sc = flat_scenario()
    T_list = np.linspace(40.0, 120.0, 5)
    warm = pareto(sc, 100, T_list=T_list, warm=True)
    cold = pareto(sc, 100, T_list=T_list, warm=False)
    for a, b in zip(warm, cold):
        assert a.status == b.status == "optimal"
        assert abs(a.consumption - b.consumption) <= 1e-5 * sc.E_init


def test_pareto_warm_start_saves_newton_steps(bundled):
    sc = bundled["paperlike"]
    T_list = [300.0, 310.0, 320.0, 330.0]
    warm = pareto(sc, 100, T_list=T_list, warm=True)
    cold = pareto(sc, 100, T_list=T_list, warm=False)
    steps = lambda pts: sum(p.plan.report.newton_iterations for p in pts[1:])
    assert steps(warm) < steps(cold)
    for a, b in zip(warm, cold):
        assert abs(a.consumption - b.consumption) <= 1e-5 * sc.E_init


def test_pareto_records_infeasible_points_and_stores_paths():
    sc = flat_scenario(E_init=1e9)
    stored = []

    def store(plan):
        stored.append(plan.T)
        return f"plan_{plan.T:g}"

    pts = pareto(sc, 50, T_list=[20.0, 60.0], store=store)
    assert pts[0].status == INFEASIBLE and math.isnan(pts[0].consumption) and pts[0].path is None
    assert pts[1].status == "optimal" and pts[1].path == "plan_60"
    assert stored == [60.0]


def test_pareto_requires_ascending_horizons():
    with pytest.raises(ValueError):
        pareto(flat_scenario(), 50, T_list=[60.0, 50.0])
    with pytest.raises(ValueError):
        pareto(flat_scenario(), 50, T_list=[60.0, 60.0])
