import csv
import json
import os

import pytest

from ecoplan.cli import EXIT_ERROR, EXIT_INFEASIBLE, EXIT_OK, main
from ecoplan.files import bundled_path

PINNED = bundled_path("pinned")


def _flat_file(tmp_path, horizon=None, E_init_kJ=2000.0):
    doc = {
        "vehicle": {"mass_kg": 1500, "rho": 1.22, "area_m2": 2.3, "cd": 0.35, "crr_N_per_mps": 5.0},
        "engine": {"type": "quadratic", "alpha_per_kW": 0.005, "beta": 1.0, "gamma_kW": 5.0,
                   "p_min_kW": 0.0, "p_max_kW": None},
        "bounds": {"E_init_kJ": E_init_kJ, "E_min_kJ": 0, "E_max_kJ": E_init_kJ,
                   "x_init_m": 0, "x_end_m": 600, "v_init_mps": 0},
        "signals": {"v_min": [[0, 0]], "v_max": [[0, 90]], "a_max": [[0, 1.5]]},
    }
    if horizon is not None:
        doc["horizon"] = {"T_s": horizon}
    path = tmp_path / "flat.json"
    path.write_text(json.dumps(doc, indent=2))
    return str(path)


def _read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def test_plan_writes_outputs_and_exits_zero(tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["plan", "--scenario", PINNED, "--out", str(out), "--grid", "50", "--svg"])
    assert code == EXIT_OK
    for name in ("solve.json", "trajectory.csv", "controls.csv", "feasibility.json", "speed.svg"):
        assert (out / name).is_file(), name
    assert _read_json(out / "solve.json")["status"] == "optimal"
    assert _read_json(out / "feasibility.json")["passed"] is True
    assert "status optimal" in capsys.readouterr().out


def test_horizon_flag_overrides_file(tmp_path):
    out = tmp_path / "out"
    assert main(["plan", "--scenario", _flat_file(tmp_path, horizon=30.0), "--out", str(out),
                 "--grid", "50", "--horizon", "60"]) == EXIT_OK
    with open(out / "trajectory.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert float(rows[-1]["t_s"]) == pytest.approx(60.0)


def test_plan_without_any_horizon_is_a_usage_error(tmp_path, capsys):
    code = main(["plan", "--scenario", _flat_file(tmp_path), "--out", str(tmp_path / "o")])
    assert code == EXIT_ERROR
    assert "no horizon" in capsys.readouterr().err


def test_infeasible_plan_exits_two(tmp_path):
    out = tmp_path / "out"
    code = main(["plan", "--scenario", _flat_file(tmp_path, horizon=20.0), "--out", str(out),
                 "--grid", "50"])
    assert code == EXIT_INFEASIBLE
    assert _read_json(out / "solve.json")["status"] == "infeasible"
    assert not (out / "trajectory.csv").exists()


def test_malformed_scenario_exits_one_with_location(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "vehicle": {\n    "mass_kg": "heavy"\n  }\n}\n')
    code = main(["plan", "--scenario", str(bad), "--out", str(tmp_path / "o"), "--horizon", "10"])
    assert code == EXIT_ERROR
    err = capsys.readouterr().err
    assert f"{bad}:" in err


@pytest.mark.parametrize("argv", [
    ["plan"],
    ["plan", "--scenario", PINNED, "--out", "x", "--grid", "0"],
    ["plan", "--scenario", PINNED, "--out", "x", "--horizon", "-3"],
    ["fly", "--scenario", PINNED],
])
def test_bad_arguments_exit_one(argv, capsys):
    assert main(argv) == EXIT_ERROR


def test_min_time_search_reports_horizon(tmp_path):
    out = tmp_path / "out"
    code = main(["min-time", "--scenario", _flat_file(tmp_path, E_init_kJ=1e6), "--out", str(out),
                 "--grid", "50", "--t-tol", "0.2"])
    assert code == EXIT_OK
    search = _read_json(out / "search.json")
    assert 28.0 < search["T_s"] < 33.0
    assert search["mode"] == "bisection"
    assert (out / "trajectory.csv").is_file()


def test_min_time_without_feasible_horizon_exits_two(tmp_path):
    out = tmp_path / "out"
    code = main(["min-time", "--scenario", _flat_file(tmp_path, E_init_kJ=1.0), "--out", str(out),
                 "--grid", "20"])
    assert code == EXIT_INFEASIBLE
    assert "error" in _read_json(out / "search.json")


def test_pareto_csv_is_byte_identical_across_runs(tmp_path):
    scenario = _flat_file(tmp_path)
    texts = []
    for run in ("a", "b"):
        out = tmp_path / run
        code = main(["pareto", "--scenario", scenario, "--out", str(out), "--grid", "40",
                     "--t-min", "40", "--t-max", "90", "--points", "4", "--svg"])
        assert code == EXIT_OK
        assert (out / "pareto.svg").is_file()
        texts.append((out / "pareto.csv").read_bytes())
    assert texts[0] == texts[1]
    rows = texts[0].decode().splitlines()
    assert rows[0] == "T_s,consumption_kJ,status" and len(rows) == 5


def test_pareto_rejects_inverted_window(tmp_path):
    code = main(["pareto", "--scenario", _flat_file(tmp_path), "--out", str(tmp_path / "o"),
                 "--t-min", "90", "--t-max", "40"])
    assert code == EXIT_ERROR


def test_simulate_replays_planned_controls(tmp_path):
    plan_dir = tmp_path / "plan"
    assert main(["plan", "--scenario", PINNED, "--out", str(plan_dir), "--grid", "50"]) == EXIT_OK
    sim_dir = tmp_path / "sim"
    code = main(["simulate", "--scenario", PINNED, "--controls", str(plan_dir / "controls.csv"),
                 "--out", str(sim_dir)])
    assert code == EXIT_OK
    report = _read_json(sim_dir / "feasibility.json")
    assert report["passed"] is True
    assert os.path.isfile(sim_dir / "trajectory.csv")


def test_simulate_flags_a_violation_with_exit_two(tmp_path):
    controls = tmp_path / "controls.csv"
    # idling from rest never reaches the end of the trip
    controls.write_text("t_s,Pdrv_kW,Pbrk_kW\n" + "".join(f"{t},0,0\n" for t in range(11)))
    code = main(["simulate", "--scenario", _flat_file(tmp_path, horizon=10.0),
                 "--controls", str(controls), "--out", str(tmp_path / "sim")])
    assert code == EXIT_INFEASIBLE


def test_simulate_rejects_negative_brake_power(tmp_path, capsys):
    controls = tmp_path / "controls.csv"
    controls.write_text("t_s,Pdrv_kW,Pbrk_kW\n0,1,0\n5,1,-2\n10,1,0\n")
    code = main(["simulate", "--scenario", PINNED, "--controls", str(controls),
                 "--out", str(tmp_path / "sim")])
    assert code == EXIT_ERROR
    assert f"{controls}:3: brake power must be nonnegative" in capsys.readouterr().err


def test_simulate_rejects_controls_shorter_than_horizon(tmp_path, capsys):
    controls = tmp_path / "controls.csv"
    controls.write_text("t_s,Pdrv_kW,Pbrk_kW\n0,1,0\n4,1,0\n8,1,0\n")
    code = main(["simulate", "--scenario", PINNED, "--controls", str(controls),
                 "--out", str(tmp_path / "sim")])
    assert code == EXIT_ERROR
    assert "not the horizon" in capsys.readouterr().err
