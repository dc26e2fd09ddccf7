"""Minimal deterministic SVG plotting.

Output depends only on the data: fixed canvas, fixed number formatting and
no timestamps, so identical inputs give byte-identical files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 640, 480
MARGIN = (70, 20, 40, 55)  # left, right, top, bottom
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f")


class PlotError(ValueError):
    pass


@dataclass
class Series:
    name: str
    x: Sequence[float]
    y: Sequence[float]
    kind: Literal["line", "points", "polygon", "marker"] = "line"
    color: str | None = None
    size: float = 2.5


@dataclass
class Figure:
    title: str
    xlabel: str
    ylabel: str
    series: list[Series] = field(default_factory=list)
    equal_aspect: bool = False

    def add(self, name, x, y, kind="line", color=None, size=2.5) -> Figure:
        self.series.append(Series(name, x, y, kind, color, size))
        return self


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    span = hi - lo
    raw = span / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-9 * step:
        ticks.append(0.0 if abs(t) < 1e-12 * step else t)
        t += step
    return ticks


def _c(v: float) -> str:
    return f"{v:.2f}"


def render(fig: Figure) -> str:
    """SVG text for ``fig``; raises :class:`PlotError` on empty or non-finite series."""
    if not fig.series:
        raise PlotError(f"figure {fig.title!r} has no data series")
    xs, ys = [], []
    for s in fig.series:
        x = np.asarray(s.x, dtype=float).ravel()
        y = np.asarray(s.y, dtype=float).ravel()
        if x.size == 0 or x.size != y.size:
            raise PlotError(f"series {s.name!r} is empty or has mismatched x/y lengths")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise PlotError(f"series {s.name!r} has non-finite values")
        xs.append(x)
        ys.append(y)
    allx, ally = np.concatenate(xs), np.concatenate(ys)
    x0, x1 = float(allx.min()), float(allx.max())
    y0, y1 = float(ally.min()), float(ally.max())
    if x1 - x0 <= 0:
        x0, x1 = x0 - 0.5 * max(abs(x0), 1e-3), x1 + 0.5 * max(abs(x1), 1e-3)
    if y1 - y0 <= 0:
        y0, y1 = y0 - 0.5 * max(abs(y0), 1e-3), y1 + 0.5 * max(abs(y1), 1e-3)
    px, py = 0.05 * (x1 - x0), 0.05 * (y1 - y0)
    x0, x1, y0, y1 = x0 - px, x1 + px, y0 - py, y1 + py

    left, right, top, bottom = MARGIN
    pw, ph = WIDTH - left - right, HEIGHT - top - bottom
    if fig.equal_aspect:
        sx, sy = pw / (x1 - x0), ph / (y1 - y0)
        s = min(sx, sy)
        cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
        x0, x1 = cx - 0.5 * pw / s, cx + 0.5 * pw / s
        y0, y1 = cy - 0.5 * ph / s, cy + 0.5 * ph / s

    def X(v):
        return left + (v - x0) / (x1 - x0) * pw

    def Y(v):
        return top + (y1 - v) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="16" text-anchor="middle" font-size="13">{escape(fig.title)}</text>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for t in _nice_ticks(x0, x1):
        out.append(f'<line x1="{_c(X(t))}" y1="{top + ph}" x2="{_c(X(t))}" y2="{top + ph + 4}" stroke="black"/>')
        out.append(f'<text x="{_c(X(t))}" y="{top + ph + 16}" text-anchor="middle">{t:.6g}</text>')
    for t in _nice_ticks(y0, y1):
        out.append(f'<line x1="{left - 4}" y1="{_c(Y(t))}" x2="{left}" y2="{_c(Y(t))}" stroke="black"/>')
        out.append(f'<text x="{left - 6}" y="{_c(Y(t) + 4)}" text-anchor="end">{t:.6g}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{HEIGHT - 10}" text-anchor="middle">{escape(fig.xlabel)}</text>')
    out.append(
        f'<text x="14" y="{top + ph / 2:.1f}" text-anchor="middle" transform="rotate(-90 14 {top + ph / 2:.1f})">{escape(fig.ylabel)}</text>'
    )
    out.append(f'<clipPath id="plot"><rect x="{left}" y="{top}" width="{pw}" height="{ph}"/></clipPath>')
    out.append('<g clip-path="url(#plot)">')
    for i, (s, x, y) in enumerate(zip(fig.series, xs, ys)):
        color = s.color or PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{_c(X(a))},{_c(Y(b))}" for a, b in zip(x, y))
        if s.kind == "line":
            out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1"/>')
        elif s.kind == "polygon":
            out.append(f'<polygon points="{pts}" fill="{color}" fill-opacity="0.15" stroke="{color}" stroke-width="1"/>')
            for a, b in zip(x, y):
                out.append(f'<circle cx="{_c(X(a))}" cy="{_c(Y(b))}" r="{s.size:.1f}" fill="{color}"/>')
        elif s.kind == "marker":
            for a, b in zip(x, y):
                cx, cy, r = X(a), Y(b), 2 * s.size
                out.append(f'<path class="marker" d="M{_c(cx - r)},{_c(cy - r)}L{_c(cx + r)},{_c(cy + r)}M{_c(cx - r)},{_c(cy + r)}L{_c(cx + r)},{_c(cy - r)}" stroke="{color}" stroke-width="2"/>')
        else:
            for a, b in zip(x, y):
                out.append(f'<circle cx="{_c(X(a))}" cy="{_c(Y(b))}" r="{s.size:.1f}" fill="{color}"/>')
    out.append("</g>")
    # legend
    named = [(i, s) for i, s in enumerate(fig.series) if s.name]
    for row, (i, s) in enumerate(named):
        color = s.color or PALETTE[i % len(PALETTE)]
        ly = top + 14 + 14 * row
        out.append(f'<rect x="{left + pw - 150}" y="{ly - 8}" width="10" height="10" fill="{color}"/>')
        out.append(f'<text x="{left + pw - 135}" y="{ly + 1}">{escape(s.name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def save(fig: Figure, path: Path) -> Path:
    Path(path).write_text(render(fig), encoding="utf-8")
    return Path(path)
