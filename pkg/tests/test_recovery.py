import numpy as np
import pytest

from ecoplan.recovery import (RECOVERED, RecoveryError, Trajectory, check_feasibility,
                              cumulative_trapezoid, recover)
from ecoplan.solver import solve
from ecoplan.transcription import Grid, transcribe

from conftest import ENGINE, flat_scenario


@pytest.fixture(scope="module")
def solved():
    sc = flat_scenario(T=60.0, x_end=700.0)
    rel, rep = solve(transcribe(sc, 120))
    assert rep.optimal
    return sc, rel


def _relaxed(sc, K, E, N):
    grid = Grid(N, sc.T)
    v = np.sqrt(2 * K / sc.vehicle.m)
    x = cumulative_trapezoid(v, grid.h, sc.x_init)
    return Trajectory(grid, x, v, K, E, np.zeros(N))


def test_closed_form_speed_and_drive_power():
    sc = flat_scenario(T=2.0, x_end=10.0, v_init=0.0)
    K = np.array([0.0, 240e3, 240e3])
    E = np.array([sc.E_init, sc.E_init - 26e3, sc.E_init - 52e3])
    rec = recover(_relaxed(sc, K, E, 2), sc)
    assert rec.v[0] == 0.0
    assert rec.v[1] == pytest.approx(np.sqrt(320.0))
    assert rec.P_drv == pytest.approx([19.164e3, 19.164e3], rel=1e-4)
    assert rec.kind == RECOVERED


def test_inverse_engine_matches_consumption_rate():
    q = 26e3
    assert float(ENGINE.rate(float(ENGINE.invert(q)))) == pytest.approx(q, rel=1e-12)


def test_optimal_plan_recovers_feasibly(solved):
    sc, rel = solved
    rec = recover(rel, sc)
    rep = check_feasibility(rec, sc)
    assert rep.passed, rep.failures()
    assert rec.E[-1] == rel.E[-1]


def test_inflated_kinetic_energy_still_recovers(solved):
    sc, rel = solved
    bad = rel.copy()
    bad.v = bad.v / np.sqrt(1.1)  # K now 10% above m v^2 / 2
    rec = recover(bad, sc)
    assert np.array_equal(rec.v, recover(rel, sc).v)
    assert check_feasibility(rec, sc).passed
    assert rec.E[-1] == rel.E[-1]


def test_tiny_kinetic_energy_flags_terminal_violation(solved):
    sc, rel = solved
    bad = rel.copy()
    bad.K = bad.K * 0.25
    rep = check_feasibility(recover(bad, sc), sc)
    assert not rep.passed
    assert "terminal" in rep.failures()


def test_recovery_is_idempotent(solved):
    sc, rel = solved
    once = recover(rel, sc)
    twice = recover(once, sc)
    for f in ("x", "v", "K", "E", "P_drv", "P_brk"):
        a, b = getattr(once, f), getattr(twice, f)
        assert np.allclose(a, b, rtol=1e-12, atol=1e-12 * np.max(np.abs(a)))


def test_recovered_trajectory_dominates_relaxed(solved):
    sc, rel = solved
    rec = recover(rel, sc)
    assert np.all(rec.v >= rel.v - 1e-9)
    assert np.all(rec.P_drv >= rel.P_drv - 1e-6)
    assert rec.x[-1] >= rel.x[-1] - 1e-9
    assert np.min(rec.P_brk) >= -1e-6 * np.max(rec.P_drv)


def test_negative_kinetic_energy_is_rejected():
    sc = flat_scenario(T=2.0, x_end=10.0)
    K = np.array([0.0, -5e3, 1e3])
    E = np.full(3, sc.E_init) - np.array([0, 1e4, 2e4])
    with pytest.raises(RecoveryError, match="negative kinetic energy"):
        recover(Trajectory(Grid(2, 2.0), np.zeros(3), np.zeros(3), K, E, np.zeros(2)), sc)


def test_consumption_outside_engine_range_is_rejected():
    sc = flat_scenario(T=2.0, x_end=10.0)
    K = np.array([0.0, 1e3, 1e3])
    E = np.full(3, sc.E_init)  # zero consumption is below the idle rate
    with pytest.raises(RecoveryError, match="engine range"):
        recover(_relaxed(sc, K, E, 2), sc)


def test_unknown_tolerance_key_is_an_error(solved):
    sc, rel = solved
    with pytest.raises(KeyError):
        check_feasibility(recover(rel, sc), sc, {"no_such_check": 1.0})
