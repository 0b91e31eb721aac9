"""Direct transcription of the relaxed planning problem on a uniform grid.

States (position, speed, kinetic energy, internal energy) live at the N+1
nodes, drive power on the N intervals. Every constraint is written in the
form ``g(z) <= 0`` (or ``g(z) = 0``) on a small set of local variables so
that derivatives stay cheap and the coupling stays banded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .model import (
    PiecewiseLinearEngine,
    Scenario,
    SignalDomainError,
    loss_power_derivatives,
    loss_power_from_K,
)


class TranscriptionError(ValueError):
    pass


# constraint tags, keyed to the relaxed formulation
TAGS = {
    "c1": "initial conditions",
    "c2": "position dynamics (trapezoidal)",
    "c3": "minimum speed",
    "c4": "maximum speed, kinetic-energy form",
    "c5": "acceleration limit, kinetic-energy form",
    "c6": "relaxed kinetic-energy definition",
    "c7": "relaxed kinetic-energy dynamics",
    "c8": "relaxed internal-energy dynamics",
    "c9": "internal-energy limits",
    "c10": "consumption range of the engine",
    "c11": "drive-power limits",
    "c12": "terminal position",
}


@dataclass(frozen=True)
class Grid:
    N: int
    T: float

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 2:
            raise TranscriptionError(f"grid needs N >= 2 intervals, got {self.N}")
        if not (math.isfinite(self.T) and self.T > 0.0):
            raise TranscriptionError(f"grid horizon must be positive, got {self.T}")

    @property
    def h(self) -> float:
        return self.T / self.N

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.N + 1)

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.N) + 0.5) * self.h


@dataclass(frozen=True)
class Layout:
    """Positions of each variable family in the flat decision vector."""

    N: int

    @property
    def size(self) -> int:
        return 4 * (self.N + 1) + self.N

    def _node(self, i: int) -> slice:
        n = self.N + 1
        return slice(i * n, (i + 1) * n)

    @property
    def x(self) -> slice:
        return self._node(0)

    @property
    def v(self) -> slice:
        return self._node(1)

    @property
    def K(self) -> slice:
        return self._node(2)

    @property
    def E(self) -> slice:
        return self._node(3)

    @property
    def P(self) -> slice:
        start = 4 * (self.N + 1)
        return slice(start, start + self.N)

    def index(self, family: str) -> np.ndarray:
        s = getattr(self, family)
        return np.arange(s.start, s.stop)

    def pack(self, x, v, K, E, P) -> np.ndarray:
        z = np.empty(self.size)
        z[self.x], z[self.v], z[self.K], z[self.E], z[self.P] = x, v, K, E, P
        return z

    def unpack(self, z):
        return z[self.x], z[self.v], z[self.K], z[self.E], z[self.P]

    def family_of(self, i: int) -> str:
        n = self.N + 1
        return ("x", "v", "K", "E", "P")[min(i // n, 4)]


# --------------------------------------------------------------------------
# Constraint blocks
# --------------------------------------------------------------------------


@dataclass
class Block:
    """A family of constraint rows sharing one functional form.

    ``index[r]`` lists the decision variables row ``r`` depends on; ``scale[r]``
    is a characteristic magnitude used to normalize residuals.
    """

    tag: str
    name: str
    kind: str  # "eq" or "ineq"
    index: np.ndarray
    scale: np.ndarray

    affine = False

    @property
    def rows(self) -> int:
        return self.index.shape[0]

    def evaluate(self, z: np.ndarray, derivatives: bool = True):
        return self.local(z[self.index], derivatives)

    def local(self, loc: np.ndarray, derivatives: bool = True):
        """Values, gradients ``(rows, q)`` and Hessians ``(rows, q, q)`` from local variables."""
        raise NotImplementedError


@dataclass
class AffineBlock(Block):
    coef: np.ndarray = field(default=None)
    const: np.ndarray = field(default=None)

    affine = True

    def local(self, loc, derivatives=True):
        val = np.einsum("rq,rq->r", self.coef, loc) + self.const
        if not derivatives:
            return val, None, None
        return val, self.coef, None


@dataclass
class AccelBlock(Block):
    """``(K1 - K0)/h - c (sqrt(K0) + sqrt(K1)) <= 0`` on local ``(K0, K1)``.

    With ``c = a sqrt(m/2)`` and ``K = m v^2 / 2`` the row is exactly
    ``v1 - v0 <= a h``; the right side is concave, so the row is convex.
    """

    h: float = 1.0
    coeff: np.ndarray = None  # a * sqrt(m/2) per row

    def local(self, loc, derivatives=True):
        K0, K1 = loc[:, 0], loc[:, 1]
        r0, r1 = np.sqrt(K0), np.sqrt(K1)
        val = (K1 - K0) / self.h - self.coeff * (r0 + r1)
        if not derivatives:
            return val, None, None
        grad = np.empty_like(loc)
        hess = np.zeros(loc.shape + (2,))
        # a vehicle at rest has K0 = 0; that column is a fixed value, never differentiated
        with np.errstate(divide="ignore"):
            grad[:, 0] = -1.0 / self.h - 0.5 * self.coeff / r0
            grad[:, 1] = 1.0 / self.h - 0.5 * self.coeff / r1
            hess[:, 0, 0] = 0.25 * self.coeff / (K0 * r0)
            hess[:, 1, 1] = 0.25 * self.coeff / (K1 * r1)
        return val, grad, hess


@dataclass
class KineticBlock(Block):
    """``m v^2 / 2 - K <= 0`` on local ``(v, K)``."""

    m: float = 1.0

    def local(self, loc, derivatives=True):
        v, K = loc[:, 0], loc[:, 1]
        val = 0.5 * self.m * v * v - K
        if not derivatives:
            return val, None, None
        grad = np.empty_like(loc)
        grad[:, 0] = self.m * v
        grad[:, 1] = -1.0
        hess = np.zeros(loc.shape + (2,))
        hess[:, 0, 0] = self.m
        return val, grad, hess


@dataclass
class DragBalanceBlock(Block):
    """``(K1-K0)/h - P + (g(K0)+g(K1))/2 - d <= 0`` on local ``(K0, K1, P)``."""

    h: float = 1.0
    vehicle: object = None
    disturbance: np.ndarray = None

    def local(self, loc, derivatives=True):
        K0, K1, P = loc[:, 0], loc[:, 1], loc[:, 2]
        g0 = loss_power_from_K(self.vehicle, K0)
        g1 = loss_power_from_K(self.vehicle, K1)
        val = (K1 - K0) / self.h - P + 0.5 * (g0 + g1) - self.disturbance
        if not derivatives:
            return val, None, None
        d0, dd0 = loss_power_derivatives(self.vehicle, K0)
        d1, dd1 = loss_power_derivatives(self.vehicle, K1)
        grad = np.empty_like(loc)
        grad[:, 0] = -1.0 / self.h + 0.5 * d0
        grad[:, 1] = 1.0 / self.h + 0.5 * d1
        grad[:, 2] = -1.0
        hess = np.zeros(loc.shape + (3,))
        hess[:, 0, 0] = 0.5 * dd0
        hess[:, 1, 1] = 0.5 * dd1
        return val, grad, hess


@dataclass
class EngineBlock(Block):
    """``(E1-E0)/h + f(P) - s <= 0`` on local ``(E0, E1, P)`` for smooth engines."""

    h: float = 1.0
    engine: object = None
    solar: np.ndarray = None

    def local(self, loc, derivatives=True):
        E0, E1, P = loc[:, 0], loc[:, 1], loc[:, 2]
        val = (E1 - E0) / self.h + self.engine.rate(P) - self.solar
        if not derivatives:
            return val, None, None
        grad = np.empty_like(loc)
        grad[:, 0] = -1.0 / self.h
        grad[:, 1] = 1.0 / self.h
        grad[:, 2] = self.engine.slope(P)
        hess = np.zeros(loc.shape + (3,))
        hess[:, 2, 2] = self.engine.curvature(P)
        return val, grad, hess


# --------------------------------------------------------------------------
# Problem
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Scales:
    """Characteristic magnitudes for normalizing residuals of each unit type."""

    x: float
    v: float
    K: float
    E: float
    P: float


@dataclass
class DiscretizedProblem:
    scenario: Scenario
    grid: Grid
    layout: Layout
    blocks: List[Block]
    scales: Scales
    objective_index: int
    v_min: np.ndarray
    v_max: np.ndarray
    a_max: np.ndarray
    solar: np.ndarray
    terrain: np.ndarray

    @property
    def n_variables(self) -> int:
        return self.layout.size

    def objective(self, z) -> float:
        """Terminal internal energy, to be maximized."""
        return float(z[self.objective_index])

    def constraints_by_tag(self) -> Dict[str, List[Block]]:
        out: Dict[str, List[Block]] = {}
        for b in self.blocks:
            out.setdefault(b.tag, []).append(b)
        return out

    def block(self, name: str) -> Block:
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(name)


def scales_for(scenario: Scenario) -> Scales:
    veh = scenario.vehicle
    vs = max(scenario.peak_speed(), abs(scenario.v_init), 1.0)
    Ks = 0.5 * veh.m * vs**2
    Es = max(abs(scenario.E_init), scenario.E_max - scenario.E_min, 1.0)
    Ps = max(veh.m * scenario.peak_accel() * vs, float(loss_power_from_K(veh, Ks)),
             abs(float(scenario.engine.rate(scenario.engine.p_min))), 1.0)
    return Scales(x=max(scenario.x_end - scenario.x_init, 1.0), v=vs, K=Ks, E=Es, P=Ps)


def _signal(scenario: Scenario, name: str, t: np.ndarray) -> np.ndarray:
    sig = getattr(scenario, name)
    if sig.times[0] > 0.0:
        raise TranscriptionError(f"signal {name} does not cover t = 0")
    try:
        return np.asarray(sig(t), dtype=float)
    except SignalDomainError as exc:  # pragma: no cover - defensive
        raise TranscriptionError(str(exc)) from exc


def transcribe(scenario: Scenario, N: int) -> DiscretizedProblem:
    """Build the discretized relaxed problem with ``N`` intervals."""
    grid = Grid(int(N), float(scenario.T))
    lay = Layout(grid.N)
    N = grid.N
    h = grid.h
    t = grid.t
    tm = grid.midpoints
    veh = scenario.vehicle
    eng = scenario.engine
    sc = scales_for(scenario)

    vmin = _signal(scenario, "v_min", t)
    vmax = _signal(scenario, "v_max", t)
    amax = _signal(scenario, "a_max", t)
    solar = _signal(scenario, "solar", tm)
    terrain = _signal(scenario, "terrain", tm)

    ix, iv, iK, iE, iP = (lay.index(f) for f in ("x", "v", "K", "E", "P"))
    k = np.arange(N)
    nodes = np.arange(N + 1)
    ones_n = np.ones(N)
    ones_nodes = np.ones(N + 1)
    blocks: List[Block] = []

    blocks.append(AffineBlock(
        "c1", "initial", "eq",
        index=np.array([[ix[0]], [iv[0]], [iK[0]], [iE[0]]]),
        scale=np.array([sc.x, sc.v, sc.K, sc.E]),
        coef=np.ones((4, 1)),
        const=-np.array([scenario.x_init, scenario.v_init, scenario.K_init, scenario.E_init]),
    ))
    blocks.append(AffineBlock(
        "c2", "position", "eq",
        index=np.stack([ix[k], ix[k + 1], iv[k], iv[k + 1]], axis=1),
        scale=sc.x * ones_n,
        coef=np.tile([-1.0, 1.0, -0.5 * h, -0.5 * h], (N, 1)),
        const=np.zeros(N),
    ))
    blocks.append(AffineBlock(
        "c3", "speed_min", "ineq",
        index=iv[nodes, None], scale=sc.v * ones_nodes,
        coef=-np.ones((N + 1, 1)), const=vmin.copy(),
    ))
    blocks.append(AffineBlock(
        "c4", "speed_max", "ineq",
        index=iK[nodes, None], scale=sc.K * ones_nodes,
        coef=np.ones((N + 1, 1)), const=-0.5 * veh.m * vmax**2,
    ))
    blocks.append(AccelBlock(
        "c5", "accel", "ineq",
        index=np.stack([iK[k], iK[k + 1]], axis=1), scale=sc.P * ones_n,
        h=h, coeff=amax[k + 1] * math.sqrt(0.5 * veh.m),
    ))
    blocks.append(KineticBlock(
        "c6", "kinetic", "ineq",
        index=np.stack([iv, iK], axis=1), scale=sc.K * ones_nodes, m=veh.m,
    ))
    blocks.append(DragBalanceBlock(
        "c7", "kinetic_dynamics", "ineq",
        index=np.stack([iK[k], iK[k + 1], iP[k]], axis=1), scale=sc.P * ones_n,
        h=h, vehicle=veh, disturbance=terrain,
    ))
    if isinstance(eng, PiecewiseLinearEngine):
        # a convex PWL curve is the max of its segment lines on its domain
        sl, ic = eng.slopes, eng.intercepts
        nseg = sl.size
        rows = np.repeat(k, nseg)
        seg = np.tile(np.arange(nseg), N)
        blocks.append(AffineBlock(
            "c8", "energy_dynamics", "ineq",
            index=np.stack([iE[rows], iE[rows + 1], iP[rows]], axis=1),
            scale=sc.P * np.ones(rows.size),
            coef=np.stack([-np.full(rows.size, 1.0 / h), np.full(rows.size, 1.0 / h), sl[seg]], axis=1),
            const=ic[seg] - solar[rows],
        ))
    else:
        blocks.append(EngineBlock(
            "c8", "energy_dynamics", "ineq",
            index=np.stack([iE[k], iE[k + 1], iP[k]], axis=1), scale=sc.P * ones_n,
            h=h, engine=eng, solar=solar,
        ))
    blocks.append(AffineBlock(
        "c9", "energy_min", "ineq",
        index=iE[nodes, None], scale=sc.E * ones_nodes,
        coef=-np.ones((N + 1, 1)), const=np.full(N + 1, scenario.E_min),
    ))
    blocks.append(AffineBlock(
        "c9", "energy_max", "ineq",
        index=iE[nodes, None], scale=sc.E * ones_nodes,
        coef=np.ones((N + 1, 1)), const=np.full(N + 1, -scenario.E_max),
    ))
    f_lo = float(eng.rate(eng.p_min))
    dE = np.stack([iE[k], iE[k + 1]], axis=1)
    blocks.append(AffineBlock(
        "c10", "consumption_min", "ineq",
        index=dE, scale=sc.P * ones_n,
        coef=np.tile([-1.0 / h, 1.0 / h], (N, 1)), const=f_lo - solar,
    ))
    if math.isfinite(eng.p_max):
        f_hi = float(eng.rate(eng.p_max))
        blocks.append(AffineBlock(
            "c10", "consumption_max", "ineq",
            index=dE, scale=sc.P * ones_n,
            coef=np.tile([1.0 / h, -1.0 / h], (N, 1)), const=solar - f_hi,
        ))
    blocks.append(AffineBlock(
        "c11", "power_min", "ineq",
        index=iP[k, None], scale=sc.P * ones_n,
        coef=-np.ones((N, 1)), const=np.full(N, eng.p_min),
    ))
    if math.isfinite(eng.p_max):
        blocks.append(AffineBlock(
            "c11", "power_max", "ineq",
            index=iP[k, None], scale=sc.P * ones_n,
            coef=np.ones((N, 1)), const=np.full(N, -eng.p_max),
        ))
    blocks.append(AffineBlock(
        "c12", "terminal", "ineq",
        index=np.array([[ix[N]]]), scale=np.array([sc.x]),
        coef=-np.ones((1, 1)), const=np.array([scenario.x_end]),
    ))

    return DiscretizedProblem(
        scenario=scenario, grid=grid, layout=lay, blocks=blocks, scales=sc,
        objective_index=int(iE[N]), v_min=vmin, v_max=vmax, a_max=amax,
        solar=solar, terrain=terrain,
    )


# --------------------------------------------------------------------------
# Evaluation and audits
# --------------------------------------------------------------------------


@dataclass
class BlockValues:
    block: Block
    values: np.ndarray
    gradients: np.ndarray
    hessians: Optional[np.ndarray]

    @property
    def normalized(self) -> np.ndarray:
        return self.values / self.block.scale


@dataclass
class Evaluation:
    objective: float
    objective_gradient: np.ndarray
    blocks: List[BlockValues]
    in_domain: bool

    def max_equality_residual(self, normalized: bool = True) -> float:
        out = 0.0
        for bv in self.blocks:
            if bv.block.kind == "eq":
                r = bv.normalized if normalized else bv.values
                out = max(out, float(np.max(np.abs(r))))
        return out

    def max_inequality_violation(self, normalized: bool = True) -> float:
        out = 0.0
        for bv in self.blocks:
            if bv.block.kind == "ineq":
                r = bv.normalized if normalized else bv.values
                out = max(out, float(np.max(r)))
        return out

    def by_tag(self, tag: str) -> List[BlockValues]:
        return [bv for bv in self.blocks if bv.block.tag == tag]


def evaluate(problem: DiscretizedProblem, z: np.ndarray, derivatives: bool = True) -> Evaluation:
    """Objective, residuals and exact derivatives of every constraint at ``z``.

    Residual sign convention: feasible iff ``<= 0`` (inequalities) or ``== 0``
    (equalities). ``in_domain`` is False when some kinetic energy entering a
    square root is negative; residuals are then NaN for those rows.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (problem.n_variables,):
        raise TranscriptionError(f"point has shape {z.shape}, expected ({problem.n_variables},)")
    in_domain = bool(np.all(z[problem.layout.K] >= 0.0))
    out = []
    with np.errstate(invalid="ignore", divide="ignore"):
        for b in problem.blocks:
            val, grad, hess = b.evaluate(z, derivatives)
            out.append(BlockValues(b, val, grad, hess))
    g0 = np.zeros(problem.n_variables)
    g0[problem.objective_index] = 1.0
    return Evaluation(problem.objective(z), g0, out, in_domain)


def audit_convexity(problem: DiscretizedProblem, points: np.ndarray, step: float = 1e-4,
                    tol: float = 1e-6) -> Dict[str, float]:
    """Check each nonlinear row has a PSD finite-difference Hessian at ``points``.

    Returns, per block name, the most negative normalized Hessian eigenvalue
    seen (>= -tol means the audit passed).
    """
    report: Dict[str, float] = {}
    for b in problem.blocks:
        if b.affine:
            continue
        worst = math.inf
        q = b.index.shape[1]
        for z in points:
            loc = z[b.index]
            hsteps = step * np.maximum(np.abs(loc), 1.0)
            H = np.zeros((b.rows, q, q))
            base = b.local(loc, derivatives=False)[0]
            for a in range(q):
                for c in range(q):
                    vals = []
                    for sa, sc_ in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                        ll = loc.copy()
                        ll[:, a] += sa * hsteps[:, a]
                        ll[:, c] += sc_ * hsteps[:, c]
                        vals.append(b.local(ll, derivatives=False)[0])
                    H[:, a, c] = (vals[0] - vals[1] - vals[2] + vals[3]) / 4.0
            # H holds second differences over unit-scaled steps
            ref = np.maximum(np.abs(base), b.scale)
            eig = np.linalg.eigvalsh(0.5 * (H + H.transpose(0, 2, 1))) / ref[:, None]
            worst = min(worst, float(eig.min()))
        report[b.name] = worst
    return report


def dump(problem: DiscretizedProblem, path) -> None:
    """Write a plain-text description of the layout and constraint families."""
    lay = problem.layout
    g = problem.grid
    lines = [
        f"grid N={g.N} T={g.T!r} h={g.h!r}",
        f"variables {lay.size}",
    ]
    for fam in ("x", "v", "K", "E", "P"):
        s = getattr(lay, fam)
        lines.append(f"  {fam}: [{s.start}, {s.stop})")
    lines.append(f"objective maximize z[{problem.objective_index}] (E_N)")
    lines.append("constraints")
    for b in problem.blocks:
        kind = "affine" if b.affine else "convex"
        lines.append(f"  {b.tag:<4} {b.name:<18} {b.kind:<5} {kind:<6} rows={b.rows} "
                     f"vars/row={b.index.shape[1]}  # {TAGS[b.tag]}")
    lines.append("bounds")
    lines.append(f"  v_min range [{problem.v_min.min()!r}, {problem.v_min.max()!r}]")
    lines.append(f"  v_max range [{problem.v_max.min()!r}, {problem.v_max.max()!r}]")
    lines.append(f"  a_max range [{problem.a_max.min()!r}, {problem.a_max.max()!r}]")
    sc = problem.scenario
    lines.append(f"  E in [{sc.E_min!r}, {sc.E_max!r}], P in [{sc.engine.p_min!r}, {sc.engine.p_max!r}]")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
