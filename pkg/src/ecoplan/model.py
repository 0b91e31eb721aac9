"""Vehicle, engine and scenario data for longitudinal energy planning.

All quantities are strict SI: metres, seconds, kilograms, joules, watts.
Unit conversion for human-facing formats happens in :mod:`ecoplan.io`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np


class ScenarioError(ValueError):
    """A scenario (or one of its parts) violates a model invariant."""


class SignalDomainError(ValueError):
    """A signal was queried outside the time range it covers."""


class EngineDomainError(ValueError):
    """A drive power or consumption rate lies outside the engine's range."""


# --------------------------------------------------------------------------
# Vehicle
# --------------------------------------------------------------------------


def _real(a):
    """Array view of ``a`` that keeps extended-precision input as is."""
    a = np.asarray(a)
    return a if a.dtype.kind == "f" else a.astype(float)


@dataclass(frozen=True)
class VehicleParams:
    m: float
    rho: float
    A: float
    C_D: float
    C_rr: float

    @property
    def drag_coefficient(self) -> float:
        """Lumped cubic drag coefficient, so that drag power is ``c * v**3``."""
        return 0.5 * self.rho * self.A * self.C_D

    def kinetic_energy(self, v):
        return 0.5 * self.m * np.square(v)

    def speed(self, K):
        """Speed of the vehicle carrying kinetic energy ``K`` (K >= 0)."""
        return np.sqrt(2.0 * _real(K) / self.m)


def drag_power(params: VehicleParams, v):
    """Aerodynamic drag power at speed ``v``."""
    v = _real(v)
    return params.drag_coefficient * v**3


def rolling_power(params: VehicleParams, v):
    """Rolling-resistance power; the resisting force is linear in speed."""
    v = _real(v)
    return params.C_rr * v**2


def loss_power_from_K(params: VehicleParams, K):
    """Drag plus rolling loss written in terms of kinetic energy.

    ``c (2K/m)^{3/2} + 2 C_rr K / m``; convex in ``K`` on ``K >= 0``.
    """
    K = _real(K)
    u = 2.0 * K / params.m
    return params.drag_coefficient * u * np.sqrt(u) + params.C_rr * u


def loss_power_derivatives(params: VehicleParams, K):
    """First and second derivative of :func:`loss_power_from_K` in ``K``.

    The second derivative is singular at ``K = 0``; it is reported as 0 there
    (callers never differentiate at a fixed zero-energy node).
    """
    K = _real(K)
    m = params.m
    c = params.drag_coefficient
    k32 = (2.0 / m) ** 1.5
    root = np.sqrt(np.maximum(K, 0.0))
    d1 = 1.5 * c * k32 * root + 2.0 * params.C_rr / m
    with np.errstate(divide="ignore", invalid="ignore"):
        d2 = np.where(K > 0.0, 0.75 * c * k32 / np.where(K > 0.0, root, 1.0), 0.0)
    return d1, d2


# --------------------------------------------------------------------------
# Engine characteristic
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadraticEngine:
    """Fuel-rate curve ``alpha p^2 + beta p + gamma`` on ``[p_min, p_max]``.

    ``alpha`` is in 1/W and ``gamma`` in W. ``p_max`` may be ``inf``.
    """

    alpha: float
    beta: float
    gamma: float
    p_min: float = 0.0
    p_max: float = math.inf

    def rate(self, p):
        p = _real(p)
        return (self.alpha * p + self.beta) * p + self.gamma

    def slope(self, p):
        return 2.0 * self.alpha * _real(p) + self.beta

    def curvature(self, p):
        return np.full_like(_real(p), 2.0 * self.alpha)

    def invert(self, q):
        q = np.asarray(q, dtype=float)
        if self.alpha == 0.0:
            return (q - self.gamma) / self.beta
        # increasing root; the rationalized form avoids cancellation for beta > 0
        root = np.sqrt(np.maximum(self.beta**2 + 4.0 * self.alpha * (q - self.gamma), 0.0))
        if self.beta > 0.0:
            return 2.0 * (q - self.gamma) / (self.beta + root)
        return (root - self.beta) / (2.0 * self.alpha)

    def check(self) -> None:
        if not self.alpha >= 0.0:
            raise ScenarioError(f"engine alpha must be nonnegative (convexity), got {self.alpha}")
        if not self.p_min <= self.p_max:
            raise ScenarioError(f"engine p_min ({self.p_min}) exceeds p_max ({self.p_max})")
        if not math.isfinite(self.p_min):
            raise ScenarioError("engine p_min must be finite")
        if not 2.0 * self.alpha * self.p_min + self.beta > 0.0:
            raise ScenarioError(
                "engine must be strictly increasing on its domain: "
                f"2*alpha*p_min + beta = {2.0 * self.alpha * self.p_min + self.beta}"
            )


@dataclass(frozen=True)
class PiecewiseLinearEngine:
    """Convex piecewise-linear fuel-rate curve through breakpoints ``(p_i, f_i)``.

    The domain is ``[p_0, p_last]``.
    """

    p: tuple
    f: tuple

    def __post_init__(self):
        object.__setattr__(self, "p", tuple(float(x) for x in self.p))
        object.__setattr__(self, "f", tuple(float(x) for x in self.f))

    @property
    def p_min(self) -> float:
        return self.p[0]

    @property
    def p_max(self) -> float:
        return self.p[-1]

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(self.f) / np.diff(self.p)

    @property
    def intercepts(self) -> np.ndarray:
        p = np.asarray(self.p)
        return np.asarray(self.f)[:-1] - self.slopes * p[:-1]

    def rate(self, p):
        return np.interp(np.asarray(p, dtype=float), self.p, self.f)

    def slope(self, p):
        p = np.asarray(p, dtype=float)
        seg = np.clip(np.searchsorted(self.p, p, side="right") - 1, 0, len(self.p) - 2)
        return self.slopes[seg]

    def curvature(self, p):
        return np.zeros_like(np.asarray(p, dtype=float))

    def invert(self, q):
        # f is strictly increasing, so swapping the axes is an exact inverse
        return np.interp(np.asarray(q, dtype=float), self.f, self.p)

    def check(self) -> None:
        if len(self.p) < 2 or len(self.p) != len(self.f):
            raise ScenarioError("piecewise-linear engine needs at least two (p, f) points")
        if not np.all(np.isfinite(self.p)) or not np.all(np.isfinite(self.f)):
            raise ScenarioError("piecewise-linear engine points must be finite")
        if np.any(np.diff(self.p) <= 0.0):
            raise ScenarioError("piecewise-linear engine powers must be strictly increasing")
        s = self.slopes
        if np.any(s <= 0.0):
            raise ScenarioError(f"piecewise-linear engine slopes must be positive, got {s.min()}")
        if np.any(np.diff(s) < -1e-12 * np.abs(s[1:])):
            raise ScenarioError("piecewise-linear engine slopes must be nondecreasing (convexity)")


EngineModel = Union[QuadraticEngine, PiecewiseLinearEngine]


def engine_rate(engine: EngineModel, p):
    """Internal-energy consumption rate at drive power ``p``."""
    arr = np.asarray(p, dtype=float)
    tol = 1e-12 * max(1.0, abs(engine.p_min), abs(engine.p_max) if math.isfinite(engine.p_max) else 1.0)
    if np.any(arr < engine.p_min - tol) or np.any(arr > engine.p_max + tol):
        raise EngineDomainError(
            f"drive power outside engine domain [{engine.p_min}, {engine.p_max}]"
        )
    return engine.rate(p)


def engine_inverse(engine: EngineModel, q):
    """Drive power at which the engine consumes energy at rate ``q``."""
    arr = np.asarray(q, dtype=float)
    lo = float(engine.rate(engine.p_min))
    hi = float(engine.rate(engine.p_max)) if math.isfinite(engine.p_max) else math.inf
    tol = 1e-12 * max(1.0, abs(lo), abs(hi) if math.isfinite(hi) else 1.0)
    if np.any(arr < lo - tol) or np.any(arr > hi + tol):
        raise EngineDomainError(f"consumption rate outside engine range [{lo}, {hi}]")
    return engine.invert(q)


# --------------------------------------------------------------------------
# Signals
# --------------------------------------------------------------------------

PIECEWISE_CONSTANT = "piecewise-constant-left"
PIECEWISE_LINEAR = "piecewise-linear"


@dataclass(frozen=True)
class Signal:
    """Time table of breakpoints.

    With ``piecewise-constant-left`` the value on ``[t_i, t_{i+1})`` is the
    value at ``t_i``. Past the last breakpoint the last value is held.
    """

    times: tuple
    values: tuple
    interpolation: str = PIECEWISE_CONSTANT

    def __post_init__(self):
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if len(self.times) == 0 or len(self.times) != len(self.values):
            raise ScenarioError("signal needs matching, nonempty time and value lists")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ScenarioError("signal breakpoint times must be strictly increasing")
        if self.interpolation not in (PIECEWISE_CONSTANT, PIECEWISE_LINEAR):
            raise ScenarioError(f"unknown signal interpolation {self.interpolation!r}")

    @classmethod
    def constant(cls, value: float) -> "Signal":
        return cls((0.0,), (value,))

    @classmethod
    def from_pairs(cls, pairs: Sequence[Sequence[float]], interpolation: str = PIECEWISE_CONSTANT):
        return cls(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs), interpolation)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        ts = np.asarray(self.times)
        vs = np.asarray(self.values)
        if self.interpolation == PIECEWISE_LINEAR:
            return np.interp(t, ts, vs)
        idx = np.searchsorted(ts, t, side="right") - 1
        return vs[np.clip(idx, 0, len(vs) - 1)]

    def scaled(self, factor: float) -> "Signal":
        return replace(self, values=tuple(factor * v for v in self.values))

    def extreme_points(self, horizon: float) -> np.ndarray:
        """Times at which a piecewise signal attains its extremes on ``[0, horizon]``."""
        inner = [t for t in self.times if 0.0 <= t <= horizon]
        return np.unique(np.array([0.0, horizon] + inner))


def sample(signal: Signal, t, horizon: Optional[float] = None):
    """Evaluate ``signal`` at ``t``, checking ``t`` lies in ``[0, horizon]``."""
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 0.0) or (horizon is not None and np.any(arr > horizon * (1 + 1e-12))):
        raise SignalDomainError(f"signal queried outside [0, {horizon}]")
    if np.any(arr < signal.times[0]):
        raise SignalDomainError(f"signal starts at t={signal.times[0]}, queried earlier")
    return signal(arr)


# --------------------------------------------------------------------------
# Scenario
# --------------------------------------------------------------------------

_ZERO = Signal.constant(0.0)


@dataclass(frozen=True)
class Scenario:
    vehicle: VehicleParams
    engine: EngineModel
    T: float
    x_init: float
    x_end: float
    v_init: float
    E_init: float
    E_min: float
    E_max: float
    v_min: Signal
    v_max: Signal
    a_max: Signal
    solar: Signal = field(default=_ZERO)
    terrain: Signal = field(default=_ZERO)

    def with_horizon(self, T: float) -> "Scenario":
        return replace(self, T=float(T))

    @property
    def K_init(self) -> float:
        return 0.5 * self.vehicle.m * self.v_init**2

    def peak_speed(self) -> float:
        """Largest speed limit over the horizon."""
        pts = self.v_max.extreme_points(self.T)
        return float(np.max(self.v_max(pts)))

    def peak_accel(self) -> float:
        pts = self.a_max.extreme_points(self.T)
        return float(np.max(self.a_max(pts)))


def _first_bad(values, cond):
    bad = np.flatnonzero(~cond(values))
    return None if bad.size == 0 else bad[0]


def validate(scenario: Scenario) -> Scenario:
    """Return ``scenario`` unchanged if every model invariant holds.

    Raises :class:`ScenarioError` naming the first violated invariant.
    """
    veh = scenario.vehicle
    names = {"m": "mass", "rho": "air density", "A": "frontal area",
             "C_D": "drag coefficient", "C_rr": "rolling-resistance constant"}
    for attr, label in names.items():
        value = getattr(veh, attr)
        if not (math.isfinite(value) and value > 0.0):
            raise ScenarioError(f"{label} must be positive (vehicle.{attr} = {value})")

    scenario.engine.check()

    if not (math.isfinite(scenario.T) and scenario.T > 0.0):
        raise ScenarioError(f"horizon T must be positive (T = {scenario.T})")
    if not scenario.x_end > scenario.x_init:
        raise ScenarioError(
            f"x_end must exceed x_init (x_init = {scenario.x_init}, x_end = {scenario.x_end})"
        )
    if not scenario.E_min <= scenario.E_init <= scenario.E_max:
        raise ScenarioError(
            "energies must satisfy E_min <= E_init <= E_max "
            f"({scenario.E_min}, {scenario.E_init}, {scenario.E_max})"
        )

    for name in ("v_min", "v_max", "a_max", "solar", "terrain"):
        sig = getattr(scenario, name)
        if sig.times[0] > 0.0:
            raise ScenarioError(f"signal {name} must cover t = 0 (starts at {sig.times[0]})")
        if not np.all(np.isfinite(sig.values)):
            raise ScenarioError(f"signal {name} has non-finite values")

    T = scenario.T
    pts = np.unique(np.concatenate([scenario.v_min.extreme_points(T), scenario.v_max.extreme_points(T)]))
    vmin = scenario.v_min(pts)
    vmax = scenario.v_max(pts)
    i = _first_bad(vmin, lambda a: a >= 0.0)
    if i is not None:
        raise ScenarioError(
            f"v_min must be nonnegative, the vehicle cannot move backward (v_min({pts[i]}) = {vmin[i]})"
        )
    i = _first_bad(vmax - vmin, lambda a: a >= 0.0)
    if i is not None:
        raise ScenarioError(f"v_min exceeds v_max at t = {pts[i]} ({vmin[i]} > {vmax[i]})")
    a_pts = scenario.a_max.extreme_points(T)
    amax = scenario.a_max(a_pts)
    i = _first_bad(amax, lambda a: a > 0.0)
    if i is not None:
        raise ScenarioError(f"a_max must be positive (a_max({a_pts[i]}) = {amax[i]})")
    if not float(scenario.v_min(0.0)) <= scenario.v_init <= float(scenario.v_max(0.0)):
        raise ScenarioError(
            f"v_init = {scenario.v_init} outside the speed limits at t = 0 "
            f"[{float(scenario.v_min(0.0))}, {float(scenario.v_max(0.0))}]"
        )
    return scenario
