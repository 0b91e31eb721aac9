"""Log-barrier interior-point solver for the transcribed planning problem.

The position chain and the fixed initial states are eliminated, which
leaves an inequality-only problem in ``(v, K, E, P)``. Ordered node by
node, every constraint couples variables at most one stage apart, so the
barrier Hessian is banded; the single terminal-position row (dense in
``v`` after elimination) is a rank-one correction handled with the
Sherman-Morrison-Woodbury identity. Infeasibility is decided by a phase-I
problem that minimizes a common slack on the normalized constraints.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_solve_banded, cholesky_banded

from .recovery import RELAXED, Trajectory, cumulative_trapezoid
from .transcription import DiscretizedProblem, loss_power_from_K

XFLOAT = np.longdouble

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITERATIONS = "max-iterations"
NUMERICAL_FAILURE = "numerical-failure"


@dataclass(frozen=True)
class SolverSettings:
    eps_gap: float = 1e-6
    eps_feas: float = 1e-6
    mu: float = 10.0
    max_newton: int = 50
    slope_fraction: float = 0.01
    shrink: float = 0.5
    max_total_iterations: int = 2000
    center_tol: float = 1e-9

    def __post_init__(self):
        for name in ("eps_gap", "eps_feas", "center_tol"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        if not self.mu > 1.0:
            raise ValueError("mu must exceed 1")
        if not 0.0 < self.slope_fraction < 0.5:
            raise ValueError("slope_fraction must lie in (0, 0.5)")
        if not 0.0 < self.shrink < 1.0:
            raise ValueError("shrink must lie in (0, 1)")
        if self.max_newton < 1 or self.max_total_iterations < 1:
            raise ValueError("iteration caps must be positive")


@dataclass
class SolveReport:
    status: str
    objective: float = math.nan
    gap: float = math.nan
    max_equality_residual: float = math.nan
    max_inequality_violation: float = math.nan
    stationarity: float = math.nan
    newton_iterations: int = 0
    phase1_iterations: int = 0
    outer_iterations: int = 0
    barrier_t: float = math.nan
    phase1_slack: float = math.nan
    wall_time: float = 0.0
    message: str = ""
    settings: dict = field(default_factory=dict)
    history: List[dict] = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    def to_dict(self, include_time: bool = True) -> dict:
        d = asdict(self)
        if not include_time:
            d.pop("wall_time")
        return d


@dataclass
class Feasibility:
    """Outcome of a phase-I query; ``margin`` is minus the optimal common slack."""

    feasible: bool
    margin: float
    certified: bool
    iterations: int
    point: Optional[np.ndarray] = None
    status: str = OPTIMAL


class _Budget:
    def __init__(self, cap: int):
        self.cap = cap
        self.used = 0

    @property
    def exhausted(self) -> bool:
        return self.used >= self.cap


# --------------------------------------------------------------------------
# Reduced workspace
# --------------------------------------------------------------------------


class _Rows:
    """Active rows of one constraint block, with scatter maps into reduced storage."""

    def __init__(self, block, sel, ridx, n, u):
        self.block = block
        self.sel = sel
        self.scale = block.scale[sel]
        self.ridx = ridx
        q = ridx.shape[1]
        self.gmap = [(a, ridx[:, a] >= 0) for a in range(q)]
        self.hmap = []
        for a in range(q):
            for c in range(a, q):
                i, j = ridx[:, a], ridx[:, c]
                ok = (i >= 0) & (j >= 0)
                lo, hi = np.minimum(i, j), np.maximum(i, j)
                self.hmap.append((a, c, ok, ((u + lo - hi) * n + hi)[ok]))

    def values(self, z):
        return self.block.evaluate(z, derivatives=False)[0][self.sel] / self.scale

    def full(self, z):
        val, grad, hess = self.block.evaluate(z, derivatives=True)
        sel, sc = self.sel, self.scale
        return val[sel] / sc, grad[sel] / sc[:, None], (
            None if hess is None else hess[sel] / sc[:, None, None])


class Workspace:
    """Eliminated, reordered view of a :class:`DiscretizedProblem`."""

    def __init__(self, problem: DiscretizedProblem, settings: SolverSettings):
        self.problem = problem
        self.settings = settings
        sc = problem.scenario
        lay = problem.layout
        N = problem.grid.N
        self.h = problem.grid.h
        veh = sc.vehicle
        size = lay.size
        self.ix, self.iv, self.iK, self.iE, self.iP = (lay.index(f) for f in ("x", "v", "K", "E", "P"))

        fixed = np.zeros(size, bool)
        zfix = np.zeros(size)
        for i, val in ((self.iv[0], sc.v_init), (self.iK[0], sc.K_init), (self.iE[0], sc.E_init)):
            fixed[i] = True
            zfix[i] = val
        # nodes where the speed band collapses to a point are equality-pinned
        pin = np.zeros(N + 1, bool)
        pin[1:] = np.abs(problem.v_max[1:] - problem.v_min[1:]) <= 1e-12 * np.maximum(problem.v_max[1:], 1.0)
        self.pinned = pin
        fixed[self.iv[pin]] = True
        zfix[self.iv[pin]] = problem.v_max[pin]
        fixed[self.iK[pin]] = True
        zfix[self.iK[pin]] = 0.5 * veh.m * problem.v_max[pin] ** 2
        chain = np.zeros(size, bool)
        chain[self.ix] = True
        self.fixed, self.zfix, self.chain = fixed, zfix, chain

        free = np.flatnonzero(~fixed & ~chain)
        stage = np.zeros(size)
        sub = np.zeros(size)
        nodes = np.arange(N + 1)
        for idx, s in ((self.iv, 0), (self.iK, 1), (self.iE, 2)):
            stage[idx] = 2 * nodes
            sub[idx] = s
        stage[self.iP] = 2 * np.arange(N) + 1
        order = free[np.lexsort((sub[free], stage[free]))]
        self.order = order
        self.n = order.size
        red = -np.ones(size, dtype=np.int64)
        red[order] = np.arange(self.n)
        self.red = red

        sc_ = problem.scales
        varscale = np.empty(size)
        varscale[self.iv] = sc_.v
        varscale[self.iK] = sc_.K
        varscale[self.iE] = sc_.E
        varscale[self.iP] = sc_.P
        varscale[self.ix] = sc_.x
        self.varscale = varscale[order]
        self.floor = 1e-9 * sc_.K
        self.K_free = red[self.iK][~fixed[self.iK]]
        self.obj_red = int(red[problem.objective_index])
        self.E_scale = sc_.E

        base = self.expand(np.zeros(self.n))
        self.local_rows: List[_Rows] = []
        self.chain_rows = []
        self.const_rows = []
        u = 0
        pending = []
        for b in problem.blocks:
            if b.kind != "ineq":
                continue
            touches_x = np.any(chain[b.index], axis=1)
            touches_free = np.any(red[b.index] >= 0, axis=1)
            if np.any(touches_x):
                if not b.affine:
                    raise ValueError(f"block {b.name} couples the position chain nonlinearly")
                for r in np.flatnonzero(touches_x):
                    self.chain_rows.append((b, r))
            const = ~touches_x & ~touches_free
            if np.any(const):
                cv = b.evaluate(base, derivatives=False)[0][const] / b.scale[const]
                for r, val in zip(np.flatnonzero(const), cv):
                    self.const_rows.append((b, int(r), float(val)))
            sel = np.flatnonzero(~touches_x & touches_free)
            if sel.size:
                ridx = red[b.index[sel]]
                masked = np.where(ridx >= 0, ridx, np.iinfo(np.int64).max)
                lo = masked.min(axis=1)
                hi = np.where(ridx >= 0, ridx, -1).max(axis=1)
                u = max(u, int(np.max(hi - lo)))
                pending.append((b, sel, ridx))
        self.u = u
        for b, sel, ridx in pending:
            self.local_rows.append(_Rows(b, sel, ridx, self.n, u))
        self.m_local = sum(r.sel.size for r in self.local_rows)
        self.m = self.m_local + len(self.chain_rows)
        self._build_chain()
        self.const_violation = max([val for _, _, val in self.const_rows] + [-math.inf])

    # -- geometry ---------------------------------------------------------

    def expand(self, y: np.ndarray) -> np.ndarray:
        # the iterate lives in extended precision: near-active slacks are
        # differences of large state values and lose digits in double
        z = self.zfix.astype(XFLOAT)
        z[self.order] = y
        v = z[self.iv]
        z[self.ix] = cumulative_trapezoid(v, self.h, self.problem.scenario.x_init)
        return z

    def restrict(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, XFLOAT)[self.order].copy()

    def _build_chain(self):
        N = self.problem.grid.N
        h = self.h
        rows = []
        for b, r in self.chain_rows:
            coef = b.coef[r]
            a = np.zeros(self.n)
            for q, var in enumerate(b.index[r]):
                if self.chain[var]:
                    j = var - self.ix[0]
                    if j == 0:
                        continue
                    w = np.full(j + 1, h)
                    w[0] = w[-1] = 0.5 * h
                    ri = self.red[self.iv[: j + 1]]
                    ok = ri >= 0
                    np.add.at(a, ri[ok], coef[q] * w[ok])
                elif self.red[var] >= 0:
                    a[self.red[var]] += coef[q]
            rows.append(a / b.scale[r])
        self.chain_A = np.array(rows).reshape(len(rows), self.n)

    def chain_values(self, z):
        return np.array([(b.coef[r] @ z[b.index[r]] + b.const[r]) / b.scale[r]
                         for b, r in self.chain_rows])

    # -- evaluation ---------------------------------------------------------

    def residuals(self, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Normalized residuals of local rows and chain rows, and the free kinetic energies."""
        z = self.expand(y)
        with np.errstate(invalid="ignore", divide="ignore"):
            loc = np.concatenate([r.values(z) for r in self.local_rows]) if self.local_rows else np.zeros(0)
        return loc, self.chain_values(z), y[self.K_free]

    def in_domain(self, y, s: Optional[float]) -> Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
        loc, ch, Kf = self.residuals(y)
        if np.any(Kf <= self.floor) or not np.all(np.isfinite(loc)):
            return None
        shift = 0.0 if s is None else s
        if np.any(loc >= shift) or np.any(ch >= shift):
            return None
        return loc, ch, Kf

    def assemble(self, y, s: Optional[float]):
        """Barrier gradient and Hessian pieces at ``y`` (and slack ``s`` in phase I).

        Rows are ``F = f_hat - s`` in phase I and ``F = f_hat`` in phase II.
        """
        n, u = self.n, self.u
        z = self.expand(y)
        shift = 0.0 if s is None else s
        gidx, gval, hidx, hval = [], [], [], []
        cidx, cval = [], []
        gs = 0.0
        hss = 0.0
        for rows in self.local_rows:
            with np.errstate(invalid="ignore", divide="ignore"):
                val, grad, hess = rows.full(z)
            F = np.asarray(val - shift, float)
            grad = np.asarray(grad, float)
            if hess is not None:
                hess = np.asarray(hess, float)
            w1 = 1.0 / F**2
            w2 = -1.0 / F
            for a, ok in rows.gmap:
                gidx.append(rows.ridx[ok, a])
                gval.append((grad[:, a] * w2)[ok])
                if s is not None:
                    cidx.append(rows.ridx[ok, a])
                    cval.append((-grad[:, a] * w1)[ok])
            for a, c, ok, flat in rows.hmap:
                contrib = w1 * grad[:, a] * grad[:, c]
                if hess is not None:
                    contrib = contrib + w2 * hess[:, a, c]
                hidx.append(flat)
                hval.append(contrib[ok])
            if s is not None:
                gs += float(np.sum(1.0 / F))
                hss += float(np.sum(w1))
        g = np.bincount(np.concatenate(gidx), np.concatenate(gval), minlength=n) if gidx else np.zeros(n)
        if s is None:
            # magnitude of the terms that cancel in g, for a relative dual residual
            self.last_gabs = (np.bincount(np.concatenate(gidx), np.abs(np.concatenate(gval)), minlength=n)
                              if gidx else np.zeros(n))
        ab = np.bincount(np.concatenate(hidx), np.concatenate(hval), minlength=(u + 1) * n).reshape(u + 1, n)
        chv = np.asarray(self.chain_values(z) - shift, float)
        A = self.chain_A
        wch = 1.0 / chv**2
        g = g + A.T @ (-1.0 / chv)
        if s is None:
            self.last_gabs = self.last_gabs + np.abs(A.T) @ np.abs(1.0 / chv)
        border = None
        if s is not None and self.K_free.size:
            # phase-I domain rows (floor - K) < 0 keep K off the square-root singularity
            gap = np.asarray(y[self.K_free] - self.floor, float)
            g[self.K_free] -= 1.0 / gap
            ab[u, self.K_free] += 1.0 / gap**2
        if s is not None:
            border = np.bincount(np.concatenate(cidx), np.concatenate(cval), minlength=n) if cidx else np.zeros(n)
            border = border - A.T @ wch
            gs += float(np.sum(1.0 / chv))
            hss += float(np.sum(wch))
        return g, ab, A, wch, border, gs, hss

    def barrier_delta(self, old, new, s_old=None, s_new=None) -> float:
        """``phi(new) - phi(old)`` computed from residual ratios (no cancellation)."""
        lo, co = old[0], old[1]
        ln, cn = new[0], new[1]
        so = 0.0 if s_old is None else s_old
        sn = 0.0 if s_new is None else s_new
        d = -np.sum(np.log((ln - sn) / (lo - so)))
        if co.size:
            d -= np.sum(np.log((cn - sn) / (co - so)))
        if s_old is not None and self.K_free.size:
            # phase-I domain rows K > floor (not slackened)
            d -= np.sum(np.log((new[2] - self.floor) / (old[2] - self.floor)))
        return float(d)


class _Factor:
    """Solves ``(B + A^T diag(w) A) x = r`` with a banded Cholesky of ``B``."""

    def __init__(self, ab, A, w, u):
        n = ab.shape[1]
        diag = ab[u].copy()
        if not np.all(np.isfinite(ab)) or np.any(diag <= 0.0):
            raise LinAlgError("barrier Hessian has a nonpositive or non-finite diagonal")
        d = np.sqrt(diag)
        scaled = ab.copy()
        cols = np.arange(n)
        for r in range(u):
            off = u - r
            rows = cols - off
            ok = rows >= 0
            scaled[r, ok] /= d[rows[ok]] * d[cols[ok]]
            scaled[r, ~ok] = 0.0
        scaled[u] = 1.0
        reg = 0.0
        for attempt in range(6):
            try:
                m = scaled.copy()
                m[u] += reg
                self.cb = cholesky_banded(m, lower=False, check_finite=False)
                break
            except LinAlgError:
                reg = 1e-12 if reg == 0.0 else reg * 100.0
        else:
            raise LinAlgError("banded Cholesky failed")
        self.d = d
        self.A = A
        self.ab = ab
        self.w = w
        self.u = u
        if A.shape[0]:
            Z = self._banded(A.T)
            S = np.diag(1.0 / w) + A @ Z
            self.Z = Z
            self.S = S
        else:
            self.Z = None

    def _banded(self, r):
        r2 = r / (self.d[:, None] if r.ndim == 2 else self.d)
        x = cho_solve_banded((self.cb, False), r2, check_finite=False)
        return x / (self.d[:, None] if r.ndim == 2 else self.d)

    def matvec(self, x):
        ab, u = self.ab, self.u
        y = ab[u] * x
        for k in range(1, u + 1):
            band = ab[u - k, k:]
            y[:-k] += band * x[k:]
            y[k:] += band * x[:-k]
        if self.A.shape[0]:
            y = y + self.A.T @ (self.w * (self.A @ x))
        return y

    def _once(self, r):
        x = self._banded(r)
        if self.Z is not None:
            corr = np.linalg.solve(self.S, self.A @ x)
            x = x - self.Z @ corr
        return x

    def solve(self, r, refine: int = 2):
        x = self._once(r)
        # the rank-one terminal row makes the system stiff; refinement recovers the lost digits
        for _ in range(refine):
            x = x + self._once(r - self.matvec(x))
        return x


# --------------------------------------------------------------------------
# Newton centering
# --------------------------------------------------------------------------


NEAR_CENTER = 1e-4
POLISH_TOL = 1e-15
PURE_NEWTON = 1e-6
WARM_RAMP = 0.95  # share of the acceleration limit a warm start may use
NEGATIVE_DECREMENT = 1e-8  # round-off allowance; beyond it the Hessian has lost definiteness


def _bordered_solve(fac: _Factor, border, hss: float, ry, rs: float, refine: int = 2):
    """Solve ``[[H, b], [b^T, c]] [dy; ds] = [ry; rs]`` by eliminating ``dy``.

    The Schur complement ``c - b^T H^{-1} b`` cancels heavily once many rows
    are nearly active, so the bordered system is refined as a whole.
    """
    Hc = fac.solve(border)
    denom = hss - border @ Hc
    if not denom > 0.0:
        raise LinAlgError("phase-I Schur complement is not positive")

    def once(ry, rs):
        Hr = fac.solve(ry)
        ds = (rs - border @ Hr) / denom
        return Hr - Hc * ds, ds

    dy, ds = once(ry, rs)
    for _ in range(refine):
        ey, es = once(ry - fac.matvec(dy) - border * ds, rs - border @ dy - hss * ds)
        dy, ds = dy + ey, ds + es
    return dy, ds


def _newton_step(ws: Workspace, y, s, t, phase1: bool):
    g, ab, A, w, border, gs, hss = ws.assemble(y, s if phase1 else None)
    if phase1:
        gs = gs + t
    else:
        g = g.copy()
        g[ws.obj_red] -= t  # objective is -E_N
    fac = _Factor(ab, A, w, ws.u)
    if phase1:
        dy, ds = _bordered_solve(fac, border, hss, -g, -gs)
        lam2 = -(g @ dy + gs * ds)
    else:
        dy = -fac.solve(g)
        ds = 0.0
        lam2 = -(g @ dy)
    return dy, ds, lam2, g, gs, fac


def _center(ws: Workspace, y, s, t, phase1: bool, budget: _Budget, tol: Optional[float] = None,
            max_steps: Optional[int] = None):
    """Minimize ``t*obj + barrier`` from a strictly feasible ``(y, s)``.

    Returns ``(y, s, converged, iterations, gradient)``.
    """
    st = ws.settings
    tol = st.center_tol if tol is None else tol
    max_steps = st.max_newton if max_steps is None else max_steps
    cur = ws.in_domain(y, s if phase1 else None)
    if cur is None:
        raise ValueError("centering needs a strictly feasible start")
    iters = 0
    g = None
    while iters < max_steps and not budget.exhausted:
        dy, ds, lam2, g, gs, _ = _newton_step(ws, y, s, t, phase1)
        if not np.isfinite(lam2) or lam2 < -NEGATIVE_DECREMENT:
            raise LinAlgError("Newton decrement is not a finite nonnegative number")
        if lam2 / 2.0 <= tol:
            return y, s, True, iters, g, lam2
        iters += 1
        budget.used += 1
        step = 1.0
        slope = -lam2
        accepted = False
        while step > 1e-14:
            yn = y + step * dy
            sn = s + step * ds if phase1 else None
            new = ws.in_domain(yn, sn)
            if new is not None:
                if phase1:
                    dobj = t * (sn - s)
                    delta = dobj + ws.barrier_delta(cur, new, s, sn)
                else:
                    dobj = -t * (yn[ws.obj_red] - y[ws.obj_red])
                    delta = dobj + ws.barrier_delta(cur, new)
                # deep in the quadratic region the predicted decrease is below the
                # round-off of the merit difference; a pure Newton step is safe there
                if delta <= st.slope_fraction * step * slope or lam2 <= PURE_NEWTON:
                    accepted = True
                    break
            step *= st.shrink
        if not accepted:
            # no measurable decrease; treat a tiny decrement as centred
            return y, s, lam2 < 1e-4, iters, g, lam2
        y, cur = yn, new
        if phase1:
            s = sn
    dy, ds, lam2, g, gs, _ = _newton_step(ws, y, s, t, phase1)
    return y, s, lam2 / 2.0 <= tol, iters, g, lam2


def _initial_t(ws: Workspace, y, s, phase1: bool, fallback: float) -> float:
    try:
        g, ab, A, w, border, gs, hss = ws.assemble(y, s if phase1 else None)
        fac = _Factor(ab, A, w, ws.u)
        if phase1:
            # objective gradient is e_s; eliminate y first
            Hc = fac.solve(border)
            Hg = fac.solve(g)
            denom = hss - border @ Hc
            # (H^{-1} e_s)_s = 1/denom, (H^{-1} g)_s = (gs - border.Hg)/denom
            num = (gs - border @ Hg) / denom
            t0 = -num / (1.0 / denom)
        else:
            e = np.zeros(ws.n)
            e[ws.obj_red] = -1.0
            He = fac.solve(e)
            t0 = -(g @ He) / (e @ He)
    except (LinAlgError, FloatingPointError):
        return fallback
    if not np.isfinite(t0) or t0 <= 0.0:
        return fallback
    return float(np.clip(t0, fallback * 1e-3, fallback * 1e3))


# --------------------------------------------------------------------------
# Phase I
# --------------------------------------------------------------------------


def _phase1(ws: Workspace, y0: np.ndarray, settings: SolverSettings, budget: _Budget,
            early: bool) -> Feasibility:
    """Minimize the common slack ``s`` subject to ``f_hat(y) <= s``.

    With ``early`` the search stops as soon as a strictly feasible point is
    found (or infeasibility is certified); otherwise it solves to ``eps_gap``.
    """
    if ws.const_violation > settings.eps_feas:
        return Feasibility(False, -ws.const_violation, True, 0, None, INFEASIBLE)
    y = y0.copy()
    if ws.K_free.size:
        y[ws.K_free] = np.maximum(y[ws.K_free], 10.0 * ws.floor)
    loc, ch, _ = ws.residuals(y)
    worst = max(float(np.max(loc)) if loc.size else -math.inf,
                float(np.max(ch)) if ch.size else -math.inf)
    if not np.isfinite(worst):
        raise LinAlgError("phase-I start is outside the domain")
    s = worst + max(1.0, 0.1 * abs(worst))
    m = ws.m + ws.K_free.size
    t = _initial_t(ws, y, s, True, 1.0)
    used0 = budget.used
    found = None
    while True:
        try:
            y, s, conv, iters, _, _ = _center(ws, y, s, t, True, budget)
        except LinAlgError:
            return Feasibility(False, math.nan, False, budget.used - used0, None, NUMERICAL_FAILURE)
        if not conv and iters > 0 and not budget.exhausted:
            # the min-max central path can bend sharply; keep centering at this t
            continue
        gap = m / t
        lower = s - gap
        if s < 0.0:
            found = y.copy()
            if early:
                return Feasibility(True, -s, True, budget.used - used0, found)
        if early and conv and lower > 0.0:
            return Feasibility(False, -lower, True, budget.used - used0, None, INFEASIBLE)
        if conv and gap <= settings.eps_gap:
            feasible = s < 0.0
            return Feasibility(feasible, -s, True, budget.used - used0,
                               found, OPTIMAL if feasible else INFEASIBLE)
        if budget.exhausted:
            return Feasibility(s < 0.0, -s, False, budget.used - used0, found, MAX_ITERATIONS)
        t *= settings.mu


# --------------------------------------------------------------------------
# Starting points
# --------------------------------------------------------------------------


def _tracked_start(problem: DiscretizedProblem, family, fracs=(0.9, 0.6, 0.3)) -> np.ndarray:
    """Interior point that tracks the speed target ``family(theta)``.

    ``family`` maps ``theta`` in [0, 1] to a target speed per node, growing
    with ``theta``; the smallest ``theta`` whose ramped profile covers the
    trip is used. Speed is ramped at a fraction of the acceleration limit;
    kinetic energy sits slightly above ``m v^2 / 2``; drive power covers
    the losses with a margin and the internal energy is drained a little
    faster than the engine demands. Of the ramp rates ``fracs``, the one
    that ends with the most energy is kept.
    """
    sc = problem.scenario
    veh = sc.vehicle
    eng = sc.engine
    g_ = problem.grid
    N, h = g_.N, g_.h
    m = veh.m
    vmin, vmax, amax = problem.v_min, problem.v_max, problem.a_max
    pin = np.zeros(N + 1, bool)
    pin[1:] = np.abs(vmax[1:] - vmin[1:]) <= 1e-12 * np.maximum(vmax[1:], 1.0)
    delta = 1e-3
    lay = problem.layout
    scl = problem.scales

    def ramp(theta, frac):
        target = np.minimum(np.maximum(family(theta), vmin), vmax * (1.0 - delta))
        v = np.empty(N + 1)
        K = np.empty(N + 1)
        v[0], K[0] = sc.v_init, sc.K_init
        # the acceleration row bounds the growth of sqrt(K) by a h sqrt(m/2) per step
        c = frac * amax[1:] * h * math.sqrt(0.5 * m)
        for k in range(N):
            if pin[k + 1]:
                v[k + 1] = vmax[k + 1]
                K[k + 1] = 0.5 * m * vmax[k + 1] ** 2
                continue
            vcap = (math.sqrt(K[k]) + c[k]) / math.sqrt(0.5 * m * (1.0 + delta))
            v[k + 1] = min(target[k + 1], vcap)
            K[k + 1] = 0.5 * m * v[k + 1] ** 2 * (1.0 + delta)
        return v, K

    def reach(theta, frac):
        v, _ = ramp(theta, frac)
        return sc.x_init + h * np.sum(0.5 * (v[:-1] + v[1:]))

    goal = sc.x_end + 1e-3 * scl.x
    eps_p = 1e-3 * scl.P

    def build(frac):
        lo, hi = 0.0, 1.0
        if reach(hi, frac) <= goal:
            theta = hi
        else:
            for _ in range(40):
                mid = 0.5 * (lo + hi)
                if reach(mid, frac) > goal:
                    hi = mid
                else:
                    lo = mid
            theta = hi
        v, K = ramp(theta, frac)
        x = cumulative_trapezoid(v, h, sc.x_init)
        gK = loss_power_from_K(veh, K)
        need = np.diff(K) / h + 0.5 * (gK[:-1] + gK[1:]) - problem.terrain
        P = np.maximum(need + eps_p, eng.p_min + eps_p)
        if math.isfinite(eng.p_max):
            P = np.minimum(P, eng.p_max - eps_p)
        q = eng.rate(P) + eps_p
        E = np.empty(N + 1)
        E[0] = sc.E_init
        E[1:] = sc.E_init + h * np.cumsum(problem.solar - q)
        return x[-1] >= sc.x_end, E[-1], lay.pack(x, v, K, E, P)

    # a gentler launch costs less under a convex engine curve but needs a faster cruise
    candidates = [build(frac) for frac in fracs]
    return max(candidates, key=lambda c: (c[0], c[1]))[2]


def cold_start(problem: DiscretizedProblem) -> np.ndarray:
    """Deterministic interior guess built from the speed band alone.

    The speed target is ``v_min + theta (v_max - v_min)``; see
    :func:`_tracked_start` for how the rest of the point is filled in.
    """
    vmin, vmax = problem.v_min, problem.v_max
    return _tracked_start(problem, lambda theta: vmin + theta * (vmax - vmin))


def is_interior(problem: DiscretizedProblem, z: np.ndarray, settings: Optional[SolverSettings] = None) -> bool:
    ws = Workspace(problem, settings or SolverSettings())
    return ws.const_violation <= 0.0 and ws.in_domain(ws.restrict(z), None) is not None


def warm_start(problem: DiscretizedProblem, previous: Trajectory,
               settings: Optional[SolverSettings] = None) -> np.ndarray:
    """Interior start shaped like ``previous``.

    On the same grid an interior ``previous`` is reused as is. Otherwise its
    speed profile is interpolated in normalized time, rescaled to the new
    horizon and tracked as in :func:`cold_start`, so trajectories of a
    different horizon or resolution can seed each other. Falls back to
    :func:`cold_start` when that point is not interior.
    """
    ws = Workspace(problem, settings or SolverSettings())
    g_ = problem.grid
    if previous.grid.N == g_.N and previous.grid.T == g_.T:
        z = problem.layout.pack(previous.x, previous.v, previous.K, previous.E, previous.P_drv)
        z[ws.fixed] = ws.zfix[ws.fixed]
        if ws.in_domain(ws.restrict(z), None) is not None:
            return z
    # a different horizon: keep the shape of the speed profile, rescaled so
    # the trip still takes the whole horizon, and rebuild the rest around it
    tau = g_.t / g_.T
    base = np.interp(tau, previous.grid.t / previous.grid.T, previous.v) * (previous.grid.T / g_.T)
    z = _tracked_start(problem, lambda theta: 2.0 * theta * base, fracs=(WARM_RAMP,))
    if ws.in_domain(ws.restrict(z), None) is not None:
        return z
    return cold_start(problem)


# --------------------------------------------------------------------------
# Public entry points
# --------------------------------------------------------------------------


def assess_feasibility(problem: DiscretizedProblem, settings: Optional[SolverSettings] = None,
                       start: Optional[np.ndarray] = None, early: bool = False) -> Feasibility:
    """Phase-I feasibility query.

    ``margin`` is the negated optimal common slack of the normalized
    constraints: positive means strictly feasible. With ``early=True`` only
    the sign is resolved and the margin is a bound, not the optimum.
    """
    settings = settings or SolverSettings()
    ws = Workspace(problem, settings)
    z0 = cold_start(problem) if start is None else np.asarray(start, float)
    budget = _Budget(settings.max_total_iterations)
    try:
        out = _phase1(ws, ws.restrict(z0), settings, budget, early)
        if out.point is not None:
            out.point = ws.expand(out.point).astype(float)
        return out
    except LinAlgError:
        return Feasibility(False, math.nan, False, budget.used, None, NUMERICAL_FAILURE)


def _trajectory(problem: DiscretizedProblem, z: np.ndarray) -> Trajectory:
    x, v, K, E, P = problem.layout.unpack(np.asarray(z, float))
    return Trajectory(problem.grid, x.copy(), v.copy(), K.copy(), E.copy(), P.copy(), None, RELAXED)


def solve(problem: DiscretizedProblem, settings: Optional[SolverSettings] = None,
          start: Optional[np.ndarray] = None, t_start: Optional[float] = None
          ) -> Tuple[Optional[Trajectory], SolveReport]:
    """Maximize terminal internal energy of the relaxed problem.

    ``start`` may be any point in the problem layout; if it is not strictly
    interior a phase-I search runs from it. ``t_start`` resumes the barrier
    parameter (useful when ``start`` is a previous central point).
    """
    settings = settings or SolverSettings()
    clock = time.perf_counter()
    report = SolveReport(status=NUMERICAL_FAILURE, settings=asdict(settings))
    ws = Workspace(problem, settings)
    budget = _Budget(settings.max_total_iterations)
    z0 = cold_start(problem) if start is None else np.asarray(start, float)
    y = ws.restrict(z0)

    def finish(status, msg=""):
        report.status = status
        report.message = msg
        report.newton_iterations = budget.used
        report.wall_time = time.perf_counter() - clock
        return report

    try:
        if ws.const_violation > settings.eps_feas or ws.in_domain(y, None) is None:
            feas = _phase1(ws, y, settings, budget, early=True)
            report.phase1_iterations = feas.iterations
            report.phase1_slack = -feas.margin
            if feas.status == NUMERICAL_FAILURE:
                return None, finish(NUMERICAL_FAILURE, "phase I broke down")
            if not feas.feasible:
                if feas.certified:
                    return None, finish(INFEASIBLE, "phase I certificate: minimal common slack is positive")
                return None, finish(MAX_ITERATIONS, "phase I did not resolve feasibility")
            y = feas.point
            t_start = None

        m = ws.m
        obj_scale = max(1.0, abs(float(y[ws.obj_red])))
        t = t_start if t_start else _initial_t(ws, y, None, False, m / (1e-2 * ws.E_scale))
        last = None
        while True:
            y, _, conv, iters, g, lam2 = _center(ws, y, None, t, False, budget)
            if not conv and lam2 / 2.0 > NEAR_CENTER and iters > 0 and not budget.exhausted:
                # far from the central path; keep centering before raising t
                continue
            report.outer_iterations += 1
            obj = float(y[ws.obj_red])
            gap = m / t
            report.history.append({"t": t, "objective": obj, "gap": gap, "bound": obj + gap,
                                   "centered": bool(conv), "decrement": float(lam2)})
            obj_scale = max(1.0, abs(obj))
            # inside the quadratic region the gap bound m/t holds up to O(decrement)
            near = conv or lam2 / 2.0 <= NEAR_CENTER
            if near:
                last = (y, g, t, gap)
            elif last is not None:
                # centering stalled at higher precision than round-off allows
                y, g, t, gap = last
                if gap <= settings.eps_gap * obj_scale:
                    break
                raise LinAlgError("centering stalled before reaching the gap tolerance")
            if near and gap <= settings.eps_gap * obj_scale:
                break
            if budget.exhausted:
                report.barrier_t = t
                _fill(report, ws, y, g, t, gap)
                return _trajectory(problem, ws.expand(y)), finish(MAX_ITERATIONS, "iteration cap reached")
            t *= settings.mu
    except LinAlgError as exc:
        return None, finish(NUMERICAL_FAILURE, str(exc))

    try:
        # a few extra Newton steps sharpen the multipliers reported with the point
        y, _, _, _, g, _ = _center(ws, y, None, t, False, budget, tol=POLISH_TOL, max_steps=3)
    except LinAlgError:
        pass
    report.barrier_t = t
    _fill(report, ws, y, g, t, gap)
    status = OPTIMAL
    msg = ""
    if report.max_equality_residual > settings.eps_feas or report.max_inequality_violation > settings.eps_feas:
        status, msg = NUMERICAL_FAILURE, "final point violates constraints beyond eps_feas"
    return _trajectory(problem, ws.expand(y)), finish(status, msg)


def _fill(report: SolveReport, ws: Workspace, y, g, t, gap):
    from .transcription import evaluate

    z = ws.expand(y)
    ev = evaluate(ws.problem, z, derivatives=False)
    report.objective = float(z[ws.problem.objective_index])
    report.gap = float(gap)
    report.max_equality_residual = ev.max_equality_residual()
    report.max_inequality_violation = max(ev.max_inequality_violation(), 0.0)
    if g is not None and g.size:
        # relative dual residual: |t grad f0 + sum grad f_i / -f_i| over the sum of magnitudes
        g, *_ = ws.assemble(y, None)
        scale = ws.last_gabs.copy()
        scale[ws.obj_red] += t
        g = g.copy()
        g[ws.obj_red] -= t
        report.stationarity = float(np.max(np.abs(g) / np.maximum(scale, 1e-300)))
    elif g is not None:
        report.stationarity = 0.0
