"""Shared numerical helpers for the test suite."""

import numpy as np

from ecoplan.solver import cold_start, solve
from ecoplan.transcription import transcribe


def interior_points(problem, count, seed=0):
    """Random strict convex combinations of the cold start and the optimum."""
    rel, rep = solve(problem)
    assert rep.optimal
    z_opt = problem.layout.pack(rel.x, rel.v, rel.K, rel.E, rel.P_drv)
    z_c = cold_start(problem)
    rng = np.random.default_rng(seed)
    return [z_opt + th * (z_c - z_opt) for th in rng.uniform(0.05, 1.0, count)]


def derivative_errors(problem, z, rel_step=1e-6):
    """Worst relative mismatch between analytic and central-difference derivatives.

    Returns ``(gradient_error, hessian_error)`` over every nonlinear row.
    Rows touching a kinetic energy at exactly zero are skipped (the loss
    power has a square-root singularity there).
    """
    K_idx = set(problem.layout.index("K"))
    g_err = h_err = 0.0
    for b in problem.blocks:
        if b.affine:
            continue
        loc = z[b.index]
        _, G, H = b.local(loc)
        is_K = np.vectorize(lambda i: i in K_idx)(b.index)
        steps = rel_step * np.maximum(np.abs(loc), 1.0)
        ok = ~np.any(is_K & (loc <= 2 * steps), axis=1)
        q = loc.shape[1]
        fd_g = np.zeros_like(G)
        fd_h = np.zeros((b.rows, q, q))
        for a in range(q):
            up, dn = loc.copy(), loc.copy()
            up[:, a] += steps[:, a]
            dn[:, a] -= steps[:, a]
            with np.errstate(invalid="ignore"):
                vu, gu, _ = b.local(up)
                vd, gd, _ = b.local(dn)
                fd_g[:, a] = (vu - vd) / (2 * steps[:, a])
                fd_h[:, :, a] = (gu - gd) / (2 * steps[:, a, None])
        gref = np.maximum(np.max(np.abs(G), axis=1), 1e-300)
        g_err = max(g_err, float(np.max((np.max(np.abs(fd_g - G), axis=1) / gref)[ok], initial=0.0)))
        if H is not None:
            href = np.maximum(np.max(np.abs(H), axis=(1, 2)), 1e-300)
            e = np.max(np.abs(fd_h - H), axis=(1, 2)) / href
            h_err = max(h_err, float(np.max(e[ok], initial=0.0)))
    return g_err, h_err


def optimal_consumption(scenario, N, settings=None):
    rel, rep = solve(transcribe(scenario, N), settings)
    assert rep.optimal, rep.message
    return float(rel.E[0] - rel.E[-1]), rel, rep
