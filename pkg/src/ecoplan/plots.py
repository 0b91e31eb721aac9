"""Minimal SVG line plots (no plotting dependency)."""

from __future__ import annotations

import math
import os
from typing import Iterable, List, Optional, Sequence, Tuple
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 640, 400
MARGIN = (70, 20, 40, 55)  # left, right, top, bottom
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def _ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10.0 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    return np.arange(start, hi + 0.5 * step, step)


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def line_plot(path: str, x: Sequence[float], series: Iterable[Tuple[str, Sequence[float]]],
              title: str, xlabel: str, ylabel: str,
              markers: Optional[List[Tuple[float, float, str]]] = None):
    """Write one SVG with a polyline per series and optional labelled markers."""
    x = np.asarray(x, float)
    series = [(label, np.asarray(y, float)) for label, y in series]
    finite = [y[np.isfinite(y)] for _, y in series]
    ys = np.concatenate([f for f in finite if f.size] or [np.zeros(1)])
    if markers:
        ys = np.concatenate([ys, [m[1] for m in markers]])
    xlo, xhi = float(np.min(x)), float(np.max(x))
    ylo, yhi = float(np.min(ys)), float(np.max(ys))
    if yhi - ylo < 1e-12 * max(1.0, abs(yhi)):
        ylo, yhi = ylo - 1.0, yhi + 1.0
    pad = 0.05 * (yhi - ylo)
    ylo, yhi = ylo - pad, yhi + pad
    if xhi <= xlo:
        xhi = xlo + 1.0
    left, right, top, bottom = MARGIN
    pw, ph = WIDTH - left - right, HEIGHT - top - bottom

    def sx(v):
        return left + (v - xlo) / (xhi - xlo) * pw

    def sy(v):
        return top + (yhi - v) / (yhi - ylo) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2}" y="{top - 8}" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for tv in _ticks(xlo, xhi):
        px = sx(tv)
        out.append(f'<line x1="{px:.2f}" y1="{top + ph}" x2="{px:.2f}" y2="{top + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{px:.2f}" y="{top + ph + 18}" text-anchor="middle">{_fmt(tv)}</text>')
    for tv in _ticks(ylo, yhi):
        py = sy(tv)
        out.append(f'<line x1="{left - 5}" y1="{py:.2f}" x2="{left}" y2="{py:.2f}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{py + 4:.2f}" text-anchor="end">{_fmt(tv)}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{top + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2})">{escape(ylabel)}</text>')
    for i, (label, y) in enumerate(series):
        color = COLORS[i % len(COLORS)]
        ok = np.isfinite(y)
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x[ok], y[ok]))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        out.append(f'<text x="{left + pw - 8}" y="{top + 16 + 14 * i}" text-anchor="end" '
                   f'fill="{color}">{escape(label)}</text>')
    for mx, my, label in markers or []:
        px, py = sx(mx), sy(my)
        out.append(f'<path d="M{px - 5:.2f},{py - 5:.2f} L{px + 5:.2f},{py + 5:.2f} '
                   f'M{px - 5:.2f},{py + 5:.2f} L{px + 5:.2f},{py - 5:.2f}" stroke="black" stroke-width="2"/>')
        out.append(f'<text x="{px + 8:.2f}" y="{py - 8:.2f}">{escape(label)}</text>')
    out.append("</svg>")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(out) + "\n")


def trajectory_plots(out_dir: str, traj, scenario) -> List[str]:
    """Speed (with limits), position, kinetic energy, drive and brake power, internal energy."""
    t = traj.t
    tm = t[:-1]
    files = []

    def emit(name, x, series, title, ylabel):
        p = os.path.join(out_dir, name)
        line_plot(p, x, series, title, "time (s)", ylabel)
        files.append(p)

    emit("speed.svg", t, [("v", traj.v * 3.6), ("v_min", np.asarray(scenario.v_min(t)) * 3.6),
                          ("v_max", np.asarray(scenario.v_max(t)) * 3.6)], "Speed", "km/h")
    emit("position.svg", t, [("x", traj.x)], "Position", "m")
    emit("kinetic_energy.svg", t, [("K", traj.K / 1e3)], "Kinetic energy", "kJ")
    emit("drive_power.svg", tm, [("P_drv", traj.P_drv / 1e3)], "Drive power", "kW")
    if traj.P_brk is not None:
        emit("brake_power.svg", tm, [("P_brk", traj.P_brk / 1e3)], "Brake power", "kW")
    emit("internal_energy.svg", t, [("E", traj.E / 1e3)], "Internal energy", "kJ")
    return files


def pareto_plot(path: str, points, marks: List[Tuple[float, float, str]]):
    T = [p.T for p in points]
    c = [p.consumption / 1e3 for p in points]
    line_plot(path, T, [("consumption", c)], "Energy versus travel time", "T (s)", "kJ",
              markers=[(a, b / 1e3, lab) for a, b, lab in marks])
