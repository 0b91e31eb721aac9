"""Command-line entry point: ``ecoplan plan | min-time | min-energy | pareto | simulate``.

Exit codes: 0 success (optimal plan, feasible simulation), 2 infeasible,
1 usage, input, I/O or numerical error.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from typing import List, Optional

import numpy as np

from . import files, plots
from .model import Scenario, ScenarioError, validate
from .planner import PlanError, SearchError, min_energy, min_time, pareto, plan_fixed_T
from .recovery import check_feasibility
from .solver import INFEASIBLE, SolverSettings
from .transcription import TranscriptionError
from .validation import ControlSchedule, simulate_forward

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 2

log = logging.getLogger("ecoplan")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # argparse's default status 2 would collide with "infeasible"
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _positive(kind):
    def parse(text):
        try:
            value = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
        if not value > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value
    return parse


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ecoplan", description="Energy-optimal speed planning along a fixed path.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, grid=True):
        sp.add_argument("--scenario", required=True, help="scenario JSON file")
        sp.add_argument("--out", required=True, help="output directory")
        if grid:
            sp.add_argument("--grid", type=_positive(int), default=1000, help="number of intervals N")
            sp.add_argument("--eps-gap", type=_positive(float), default=SolverSettings.eps_gap)
            sp.add_argument("--max-iter", type=_positive(int), default=SolverSettings.max_total_iterations)

    sp = sub.add_parser("plan", help="energy-optimal plan for a fixed horizon")
    common(sp)
    sp.add_argument("--horizon", type=_positive(float), help="horizon T in seconds (overrides the file)")
    sp.add_argument("--svg", action="store_true", help="also write per-quantity SVG plots")

    for name, helptext in (("min-time", "shortest feasible horizon"),
                           ("min-energy", "horizon with the least consumption")):
        sp = sub.add_parser(name, help=helptext)
        common(sp)
        sp.add_argument("--t-tol", type=_positive(float), default=0.1 if name == "min-time" else 0.5,
                        help="horizon tolerance in seconds")
        sp.add_argument("--svg", action="store_true")

    sp = sub.add_parser("pareto", help="consumption over a sweep of horizons")
    common(sp)
    sp.add_argument("--t-min", type=_positive(float), required=True)
    sp.add_argument("--t-max", type=_positive(float), required=True)
    sp.add_argument("--points", type=int, default=20)
    sp.add_argument("--svg", action="store_true")

    sp = sub.add_parser("simulate", help="forward-simulate a controls CSV")
    common(sp, grid=False)
    sp.add_argument("--controls", required=True, help="CSV with header t_s,Pdrv_kW,Pbrk_kW")
    sp.add_argument("--horizon", type=_positive(float), help="horizon T in seconds (overrides the file)")
    sp.add_argument("--svg", action="store_true")
    return p


def _settings(args) -> SolverSettings:
    return SolverSettings(eps_gap=args.eps_gap, max_total_iterations=args.max_iter)


def _with_search_horizon(scenario: Scenario) -> Scenario:
    # searches pick their own horizons; any positive value lets the file validate
    return scenario if math.isfinite(scenario.T) else scenario.with_horizon(1.0)


def _write_plan(out: str, plan, svg: bool):
    files.write_json(os.path.join(out, "solve.json"), plan.report.to_dict())
    if plan.trajectory is not None:
        files.write_trajectory_csv(os.path.join(out, "trajectory.csv"), plan.trajectory)
        files.write_controls_csv(os.path.join(out, "controls.csv"),
                                 ControlSchedule.from_trajectory(plan.trajectory))
    if plan.feasibility is not None:
        files.write_json(os.path.join(out, "feasibility.json"), plan.feasibility.to_dict())
    if svg and plan.trajectory is not None:
        plots.trajectory_plots(out, plan.trajectory, plan.scenario)


def _plan_exit(plan) -> int:
    if plan.optimal:
        return EXIT_OK
    return EXIT_INFEASIBLE if plan.status == INFEASIBLE else EXIT_ERROR


def cmd_plan(args) -> int:
    sc = files.load_scenario(args.scenario, args.horizon)
    if not math.isfinite(sc.T):
        raise UsageError("no horizon: pass --horizon or set horizon.T_s in the scenario")
    files.ensure_dir(args.out)
    try:
        plan = plan_fixed_T(sc, args.grid, _settings(args))
    except PlanError as exc:
        _write_plan(args.out, exc.plan, False)
        raise
    _write_plan(args.out, plan, args.svg)
    print(f"status {plan.status}: T = {sc.T:g} s, consumption = "
          f"{plan.consumption / 1e3:.3f} kJ" if plan.optimal else f"status {plan.status}")
    return _plan_exit(plan)


def cmd_search(args) -> int:
    sc = _with_search_horizon(files.load_scenario(args.scenario))
    files.ensure_dir(args.out)
    settings = _settings(args)
    try:
        if args.command == "min-time":
            res = min_time(sc, args.grid, settings, args.t_tol)
        else:
            res = min_energy(sc, args.grid, settings, args.t_tol)
    except SearchError as exc:
        files.write_json(os.path.join(args.out, "search.json"), {"error": str(exc)})
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    files.write_json(os.path.join(args.out, "search.json"), res.to_dict())
    _write_plan(args.out, res.plan, args.svg)
    print(f"{args.command}: T = {res.T:.4f} s ({res.mode}), consumption = {res.plan.consumption / 1e3:.3f} kJ")
    return _plan_exit(res.plan)


def cmd_pareto(args) -> int:
    if not args.t_min < args.t_max:
        raise UsageError("--t-min must be smaller than --t-max")
    if args.points < 2:
        raise UsageError("--points must be at least 2")
    sc = _with_search_horizon(files.load_scenario(args.scenario))
    files.ensure_dir(args.out)
    T_list = np.linspace(args.t_min, args.t_max, args.points)
    pts = pareto(sc, args.grid, _settings(args), T_list)
    files.write_pareto_csv(os.path.join(args.out, "pareto.csv"), pts)
    ok = [p for p in pts if math.isfinite(p.consumption)]
    if args.svg and ok:
        marks = [(ok[0].T, ok[0].consumption, "fastest feasible")]
        best = min(ok, key=lambda p: p.consumption)
        marks.append((best.T, best.consumption, "least energy"))
        plots.pareto_plot(os.path.join(args.out, "pareto.svg"), pts, marks)
    print(f"pareto: {len(ok)} of {len(pts)} horizons optimal")
    if not ok:
        return EXIT_INFEASIBLE if all(p.status == INFEASIBLE for p in pts) else EXIT_ERROR
    return EXIT_OK


def cmd_simulate(args) -> int:
    schedule = files.read_controls_csv(args.controls)
    sc = files.load_scenario(args.scenario, args.horizon)
    T_file = sc.T
    if not math.isfinite(T_file):
        sc = sc.with_horizon(schedule.T)
    tol = 1e-9 * max(1.0, sc.T)
    if schedule.t[0] > tol or schedule.t[-1] < sc.T - tol:
        raise UsageError(f"controls cover [{schedule.t[0]:g}, {schedule.t[-1]:g}] s, "
                         f"not the horizon [0, {sc.T:g}] s")
    if schedule.t[-1] > sc.T + tol:
        raise UsageError(f"controls run past the horizon T = {sc.T:g} s (last time {schedule.t[-1]:g} s)")
    validate(sc)
    traj = simulate_forward(schedule, sc)
    report = check_feasibility(traj, sc)
    files.ensure_dir(args.out)
    files.write_trajectory_csv(os.path.join(args.out, "trajectory.csv"), traj)
    files.write_json(os.path.join(args.out, "feasibility.json"),
                     dict(report.to_dict(), shed_energy_J=traj.shed_energy))
    if args.svg:
        plots.trajectory_plots(args.out, traj, sc)
    print(f"simulated: x_N = {traj.x[-1]:.3f} m, E_N = {traj.E[-1] / 1e3:.3f} kJ, "
          f"feasible = {report.passed}")
    return EXIT_OK if report.passed else EXIT_INFEASIBLE


COMMANDS = {"plan": cmd_plan, "min-time": cmd_search, "min-energy": cmd_search,
            "pareto": cmd_pareto, "simulate": cmd_simulate}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ScenarioError, TranscriptionError, ValueError, PlanError, OSError) as exc:
        print(f"ecoplan {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
