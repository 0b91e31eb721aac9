"""Scenario JSON and trajectory/controls CSV.

Scenario files carry units in their field names (kJ, kW, km/h, ...); they
are converted to SI here and nowhere else.
"""

from __future__ import annotations

import csv
import json
import math
import os
from importlib import resources
from typing import Any, Dict, List, Optional

import numpy as np

from .model import (PIECEWISE_CONSTANT, PIECEWISE_LINEAR, PiecewiseLinearEngine, QuadraticEngine,
                    Scenario, ScenarioError, Signal, VehicleParams, validate)
from .recovery import Trajectory
from .transcription import Grid
from .validation import ControlSchedule

KMH = 1.0 / 3.6
KILO = 1e3

TRAJECTORY_HEADER = ["t_s", "x_m", "v_mps", "K_kJ", "Pdrv_kW", "Pbrk_kW", "E_kJ", "kind"]
CONTROLS_HEADER = ["t_s", "Pdrv_kW", "Pbrk_kW"]
PARETO_HEADER = ["T_s", "consumption_kJ", "status"]

_SECTIONS = {"description", "vehicle", "engine", "bounds", "horizon", "signals"}
_VEHICLE = {"mass_kg", "rho", "area_m2", "cd", "crr_N_per_mps"}
_BOUNDS = {"E_init_kJ", "E_min_kJ", "E_max_kJ", "x_init_m", "x_end_m", "v_init_mps"}
_SIGNALS = {"v_min": KMH, "v_max": KMH, "a_max": 1.0, "solar": KILO, "terrain": KILO}
_ENGINE = {
    "quadratic": ({"type", "alpha_per_kW", "beta", "gamma_kW", "p_min_kW", "p_max_kW"}, set()),
    "pwl": ({"type", "points", "p_min_kW", "p_max_kW"}, set()),
}


class ScenarioFileError(ValueError):
    """A scenario file that cannot be read; the message names line and field."""


def _line_of(text: str, path: List[str]) -> Optional[int]:
    """Line of the last key of ``path``, searched after its parents."""
    pos = 0
    for key in path:
        hit = text.find(f'"{key}"', pos)
        if hit < 0:
            return None
        pos = hit
    return text.count("\n", 0, pos) + 1


class _Reader:
    def __init__(self, text: str, source: str):
        self.text = text
        self.source = source

    def fail(self, path: List[str], message: str):
        line = _line_of(self.text, path)
        where = f"{self.source}:{line}" if line else self.source
        raise ScenarioFileError(f"{where}: field {'.'.join(path) or '<root>'}: {message}")

    def section(self, doc: Dict[str, Any], path: List[str], allowed, required) -> Dict[str, Any]:
        if not isinstance(doc, dict):
            self.fail(path, "expected an object")
        for key in doc:
            if key not in allowed:
                self.fail(path + [key], f"unknown key (allowed: {', '.join(sorted(allowed))})")
        for key in sorted(required):
            if key not in doc:
                self.fail(path, f"missing required key {key!r}")
        return doc

    def number(self, doc, path: List[str], allow_null=False) -> Optional[float]:
        value = doc[path[-1]]
        if value is None and allow_null:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            self.fail(path, f"expected a finite number, got {value!r}")
        return float(value)

    def pairs(self, value, path: List[str]) -> List[List[float]]:
        if not isinstance(value, list) or not value:
            self.fail(path, "expected a nonempty list of [time, value] pairs")
        out = []
        for i, item in enumerate(value):
            if (not isinstance(item, list) or len(item) != 2
                    or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in item)):
                self.fail(path, f"entry {i} must be a [number, number] pair, got {item!r}")
            out.append([float(item[0]), float(item[1])])
        return out

    def signal(self, value, path: List[str], factor: float) -> Signal:
        interp = PIECEWISE_CONSTANT
        if isinstance(value, dict):
            self.section(value, path, {"points", "interpolation"}, {"points"})
            interp = value.get("interpolation", PIECEWISE_CONSTANT)
            if interp not in (PIECEWISE_CONSTANT, PIECEWISE_LINEAR):
                self.fail(path + ["interpolation"],
                          f"must be {PIECEWISE_CONSTANT!r} or {PIECEWISE_LINEAR!r}")
            value = value["points"]
        pts = self.pairs(value, path)
        try:
            return Signal.from_pairs([[t, factor * v] for t, v in pts], interp)
        except ScenarioError as exc:
            self.fail(path, str(exc))


def parse_scenario(text: str, source: str = "<scenario>", horizon: Optional[float] = None) -> Scenario:
    """Scenario from JSON text. ``horizon`` overrides ``horizon.T_s``.

    When neither gives a horizon the scenario carries ``T = nan`` and must
    be given one (``with_horizon``) before it validates.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioFileError(f"{source}:{exc.lineno}:{exc.colno}: malformed JSON: {exc.msg}") from None
    r = _Reader(text, source)
    r.section(doc, [], _SECTIONS, {"vehicle", "engine", "bounds", "signals"})
    if "description" in doc and not isinstance(doc["description"], str):
        r.fail(["description"], "expected a string")

    veh = r.section(doc["vehicle"], ["vehicle"], _VEHICLE, _VEHICLE)
    vehicle = VehicleParams(
        m=r.number(veh, ["vehicle", "mass_kg"]),
        rho=r.number(veh, ["vehicle", "rho"]),
        A=r.number(veh, ["vehicle", "area_m2"]),
        C_D=r.number(veh, ["vehicle", "cd"]),
        C_rr=r.number(veh, ["vehicle", "crr_N_per_mps"]),
    )

    eng = doc["engine"]
    if not isinstance(eng, dict) or eng.get("type") not in _ENGINE:
        r.fail(["engine", "type"], f"must be one of {sorted(_ENGINE)}")
    allowed, _ = _ENGINE[eng["type"]]
    r.section(eng, ["engine"], allowed, allowed)
    p_min = KILO * r.number(eng, ["engine", "p_min_kW"])
    p_max_kw = r.number(eng, ["engine", "p_max_kW"], allow_null=True)
    p_max = math.inf if p_max_kw is None else KILO * p_max_kw
    try:
        if eng["type"] == "quadratic":
            engine = QuadraticEngine(
                alpha=r.number(eng, ["engine", "alpha_per_kW"]) / KILO,
                beta=r.number(eng, ["engine", "beta"]),
                gamma=KILO * r.number(eng, ["engine", "gamma_kW"]),
                p_min=p_min, p_max=p_max,
            )
        else:
            pts = r.pairs(eng["points"], ["engine", "points"])
            engine = PiecewiseLinearEngine(tuple(KILO * p for p, _ in pts), tuple(KILO * f for _, f in pts))
            if abs(engine.p_min - p_min) > 1e-9 * max(1.0, abs(p_min)) or (
                    abs(engine.p_max - p_max) > 1e-9 * max(1.0, abs(engine.p_max))):
                r.fail(["engine", "points"], "first and last breakpoints must equal p_min_kW and p_max_kW")
        engine.check()
    except ScenarioError as exc:
        r.fail(["engine"], str(exc))

    b = r.section(doc["bounds"], ["bounds"], _BOUNDS, _BOUNDS)
    T = math.nan
    if "horizon" in doc:
        hz = r.section(doc["horizon"], ["horizon"], {"T_s"}, set())
        if "T_s" in hz:
            T = r.number(hz, ["horizon", "T_s"])
    if horizon is not None:
        T = float(horizon)

    sig = r.section(doc["signals"], ["signals"], set(_SIGNALS), {"v_min", "v_max", "a_max"})
    signals = {name: r.signal(sig[name], ["signals", name], _SIGNALS[name]) for name in sig}

    scenario = Scenario(
        vehicle=vehicle, engine=engine, T=T,
        x_init=r.number(b, ["bounds", "x_init_m"]),
        x_end=r.number(b, ["bounds", "x_end_m"]),
        v_init=r.number(b, ["bounds", "v_init_mps"]),
        E_init=KILO * r.number(b, ["bounds", "E_init_kJ"]),
        E_min=KILO * r.number(b, ["bounds", "E_min_kJ"]),
        E_max=KILO * r.number(b, ["bounds", "E_max_kJ"]),
        **signals,
    )
    try:
        validate(scenario if math.isfinite(T) else scenario.with_horizon(1.0))
    except ScenarioError as exc:
        raise ScenarioFileError(f"{source}: {exc}") from None
    return scenario


def load_scenario(path: str, horizon: Optional[float] = None) -> Scenario:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ScenarioFileError(f"{path}: cannot read scenario: {exc.strerror}") from None
    return parse_scenario(text, path, horizon)


BUNDLED = ("paperlike", "pinned", "cruise", "energy_limited")


def bundled_path(name: str) -> str:
    """Filesystem path of a scenario shipped with the package."""
    if name not in BUNDLED:
        raise KeyError(f"no bundled scenario {name!r} (have {', '.join(BUNDLED)})")
    return str(resources.files("ecoplan") / "scenarios" / f"{name}.json")


def load_bundled(name: str, horizon: Optional[float] = None) -> Scenario:
    return load_scenario(bundled_path(name), horizon)


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------


def _fmt(value: float) -> str:
    return repr(float(value))


def _repeat_last(a: Optional[np.ndarray]) -> List[Optional[float]]:
    if a is None:
        return []
    return list(a) + [a[-1]]


def write_trajectory_csv(path: str, traj: Trajectory):
    """One row per node; interval powers sit on their left node, the last row repeats."""
    P = _repeat_last(traj.P_drv)
    B = _repeat_last(traj.P_brk)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_HEADER)
        for k in range(traj.t.size):
            w.writerow([
                _fmt(traj.t[k]), _fmt(traj.x[k]), _fmt(traj.v[k]), _fmt(traj.K[k] / KILO),
                _fmt(P[k] / KILO), _fmt(B[k] / KILO) if B else "", _fmt(traj.E[k] / KILO), traj.kind,
            ])


def _rows(path: str, header: List[str]) -> List[List[str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != header:
        got = ",".join(rows[0]) if rows else "<empty file>"
        raise ValueError(f"{path}:1: expected header {','.join(header)}, got {got}")
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ValueError(f"{path}:{i}: expected {len(header)} fields, got {len(row)}")
    return rows[1:]


def _column(rows, j, path, allow_empty=False) -> Optional[np.ndarray]:
    out = []
    for i, row in enumerate(rows, start=2):
        cell = row[j]
        if cell == "" and allow_empty:
            return None
        try:
            out.append(float(cell))
        except ValueError:
            raise ValueError(f"{path}:{i}: field {j + 1} is not a number: {cell!r}") from None
    return np.array(out)


def read_trajectory_csv(path: str) -> Trajectory:
    rows = _rows(path, TRAJECTORY_HEADER)
    if len(rows) < 3:
        raise ValueError(f"{path}: a trajectory needs at least 3 rows")
    t = _column(rows, 0, path)
    grid = Grid(len(rows) - 1, float(t[-1]))
    cols = [_column(rows, j, path) for j in (1, 2, 3, 4)]
    brake = _column(rows, 5, path, allow_empty=True)
    E = _column(rows, 6, path)
    kinds = {row[7] for row in rows}
    if len(kinds) != 1:
        raise ValueError(f"{path}: mixed trajectory kinds {sorted(kinds)}")
    x, v, K, P = cols
    return Trajectory(grid, x, v, K * KILO, E * KILO, P[:-1] * KILO,
                      None if brake is None else brake[:-1] * KILO, kinds.pop())


def write_controls_csv(path: str, schedule: ControlSchedule):
    P = _repeat_last(schedule.P_drv)
    B = _repeat_last(schedule.P_brk)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CONTROLS_HEADER)
        for k in range(schedule.t.size):
            w.writerow([_fmt(schedule.t[k]), _fmt(P[k] / KILO), _fmt(B[k] / KILO)])


def read_controls_csv(path: str) -> ControlSchedule:
    rows = _rows(path, CONTROLS_HEADER)
    if len(rows) < 2:
        raise ValueError(f"{path}: controls need at least 2 rows")
    t, P, B = (_column(rows, j, path) for j in range(3))
    neg = np.flatnonzero(B[:-1] < 0.0)
    if neg.size:
        i = int(neg[0])
        raise ValueError(f"{path}:{i + 2}: brake power must be nonnegative (Pbrk_kW = {B[i]})")
    return ControlSchedule(t, P[:-1] * KILO, B[:-1] * KILO)


def write_pareto_csv(path: str, points):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PARETO_HEADER)
        for p in points:
            c = "" if not math.isfinite(p.consumption) else _fmt(p.consumption / KILO)
            w.writerow([_fmt(p.T), c, p.status])


def _jsonable(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    return obj


def write_json(path: str, obj):
    """JSON with non-finite numbers written as null."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def ensure_dir(path: str):
    os.makedirs(path, exist_ok=True)
