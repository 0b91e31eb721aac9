import math
import time

import numpy as np
import pytest

from ecoplan.model import Signal
from ecoplan.solver import (INFEASIBLE, SolverSettings, assess_feasibility, cold_start, is_interior,
                            solve, warm_start)
from ecoplan.transcription import transcribe

from conftest import ENGINE, flat_scenario
from helpers import optimal_consumption


def test_settings_reject_bad_values():
    with pytest.raises(ValueError):
        SolverSettings(eps_gap=0.0)
    with pytest.raises(ValueError):
        SolverSettings(mu=1.0)
    with pytest.raises(ValueError):
        SolverSettings(max_total_iterations=0)


def test_pinned_speed_consumption(bundled):
    sc = bundled["pinned"]
    used, rel, rep = optimal_consumption(sc, 200)
    P = 0.5 * 1.22 * 2.3 * 0.35 * 20.0**3 + 5.0 * 20.0**2
    expected = sc.T * float(ENGINE.rate(P))
    assert expected == pytest.approx(111.04e3, rel=1e-4)
    assert used == pytest.approx(expected, rel=1e-4)
    assert np.allclose(rel.v, 20.0)


def test_report_meets_tolerances(bundled):
    sc = bundled["paperlike"]
    _, rel, rep = optimal_consumption(sc, 200)
    s = SolverSettings()
    assert rep.gap <= s.eps_gap * max(1.0, abs(rep.objective))
    assert rep.max_equality_residual <= s.eps_feas
    assert rep.max_inequality_violation <= s.eps_feas
    assert rep.stationarity <= 1e-6
    assert rep.objective == rel.E[-1]


def test_unreachable_end_is_infeasible():
    # 25 m/s for 60 s covers at most 1500 m
    sc = flat_scenario(x_end=1600.0)
    rel, rep = solve(transcribe(sc, 60))
    assert rep.status == INFEASIBLE
    assert rel is None
    feas = assess_feasibility(transcribe(sc, 60))
    assert not feas.feasible and feas.margin < 0


def test_contradictory_speed_band_is_infeasible():
    v_min = Signal.from_pairs([(0.0, 0.0), (20.0, 15.0), (30.0, 0.0)])
    v_max = Signal.from_pairs([(0.0, 25.0), (20.0, 10.0), (30.0, 25.0)])
    sc = flat_scenario(v_min=0.0)
    from dataclasses import replace
    sc = replace(sc, v_min=v_min, v_max=v_max)
    feas = assess_feasibility(transcribe(sc, 60))
    assert not feas.feasible


def test_optimal_scenario_has_nonnegative_margin(bundled):
    feas = assess_feasibility(transcribe(bundled["paperlike"], 100))
    assert feas.feasible and feas.margin >= -SolverSettings().eps_feas
    assert feas.certified


def test_margin_monotone_in_trip_length():
    margins = []
    for x_end in np.arange(1200.0, 1500.0, 25.0):
        margins.append(assess_feasibility(transcribe(flat_scenario(x_end=x_end), 60)).margin)
    # shorter trips never have a smaller margin
    assert all(a >= b - 1e-9 for a, b in zip(margins, margins[1:]))
    assert margins[0] > margins[-1]


def test_cold_start_is_interior_on_bundled(bundled):
    for sc in bundled.values():
        p = transcribe(sc, 200)
        assert is_interior(p, cold_start(p)), sc


def test_warm_start_from_own_solution_converges_quickly(bundled):
    for sc in bundled.values():
        p = transcribe(sc, 200)
        rel, rep = solve(p)
        z = warm_start(p, rel)
        assert is_interior(p, z)
        rel2, rep2 = solve(p, start=z, t_start=rep.barrier_t)
        assert rep2.optimal
        assert rep2.newton_iterations <= 5
        assert rep2.objective == pytest.approx(rep.objective, rel=1e-9)


def test_coarse_solution_interpolates_to_interior_point(bundled):
    sc = bundled["paperlike"]
    rel, _ = solve(transcribe(sc, 500))
    fine = transcribe(sc, 1000)
    assert is_interior(fine, warm_start(fine, rel))


def test_dual_bound_is_monotone(bundled):
    _, _, rep = optimal_consumption(bundled["paperlike"], 200)
    bounds = [h["bound"] for h in rep.history]
    gaps = [h["gap"] for h in rep.history]
    assert len(bounds) >= 3
    assert all(b <= a * (1 + 1e-12) for a, b in zip(bounds, bounds[1:]))
    assert all(b < a for a, b in zip(gaps, gaps[1:]))


def test_repeated_solves_are_bit_identical(bundled):
    p = transcribe(bundled["energy_limited"], 150)
    r1, a = solve(p)
    r2, b = solve(p)
    assert a.to_dict(include_time=False) == b.to_dict(include_time=False)
    for f in ("x", "v", "K", "E", "P_drv"):
        assert np.array_equal(getattr(r1, f), getattr(r2, f))


def test_iteration_cap_reports_max_iterations(bundled):
    rel, rep = solve(transcribe(bundled["paperlike"], 100), SolverSettings(max_total_iterations=5))
    assert rep.status == "max-iterations"


def _best_time(problem, repeats=2):
    out = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        _, rep = solve(problem)
        out = min(out, time.perf_counter() - t0)
        assert rep.optimal
    return out


@pytest.mark.slow
def test_doubling_grid_less_than_triples_time(bundled):
    sc = bundled["paperlike"]
    t1 = _best_time(transcribe(sc, 500))
    t2 = _best_time(transcribe(sc, 1000))
    assert t2 < 3.0 * t1
