"""
Minimal deterministic SVG charts: line plots, panel grids and plan views
of beam grids coloured by a nodal value.  Output depends only on the input
numbers, so repeated runs give identical bytes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")
FONT = 'font-family="sans-serif"'


def _f(v: float) -> str:
    return f"{v:.2f}"


def _label(v: float) -> str:
    return f"{v:.3g}"


@dataclass
class Series:
    label: str
    x: Sequence[float]
    y: Sequence[float]
    dashed: bool = False
    markers: bool = False


@dataclass
class Chart:
    title: str
    series: list = field(default_factory=list)
    xlabel: str = ""
    ylabel: str = ""
    log_y: bool = False


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step - 1e-9) * step
    out, t = [], start
    while t <= hi + 1e-9 * step:
        out.append(0.0 if abs(t) < 1e-12 * step else t)
        t += step
    return out


def _chart_body(chart: Chart, x0: float, y0: float, w: float, h: float) -> list[str]:
    """SVG elements of one chart inside the box ``(x0, y0, w, h)``."""
    left, right, top, bottom = 62.0, 12.0, 26.0, 40.0
    pw, ph = w - left - right, h - top - bottom
    ox, oy = x0 + left, y0 + top
    pts = []
    for s in chart.series:
        x = np.asarray(s.x, dtype=float)
        y = np.asarray(s.y, dtype=float)
        ok = np.isfinite(x) & np.isfinite(y)
        if chart.log_y:
            ok &= y > 0
        pts.append((x[ok], np.log10(y[ok]) if chart.log_y else y[ok]))
    allx = np.concatenate([p[0] for p in pts]) if pts else np.zeros(0)
    ally = np.concatenate([p[1] for p in pts]) if pts else np.zeros(0)
    if len(allx) == 0:
        allx, ally = np.array([0.0, 1.0]), np.array([0.0, 1.0])
    xmin, xmax = float(allx.min()), float(allx.max())
    ymin, ymax = float(ally.min()), float(ally.max())
    if xmax <= xmin:
        xmin, xmax = xmin - 0.5, xmax + 0.5
    if ymax <= ymin:
        pad = 0.5 * abs(ymin) if ymin else 0.5
        ymin, ymax = ymin - pad, ymax + pad
    pad = 0.05 * (ymax - ymin)
    ymin, ymax = ymin - pad, ymax + pad

    def sx(v):
        return ox + (v - xmin) / (xmax - xmin) * pw

    def sy(v):
        return oy + ph - (v - ymin) / (ymax - ymin) * ph

    out = [f'<rect x="{_f(ox)}" y="{_f(oy)}" width="{_f(pw)}" height="{_f(ph)}" fill="white" stroke="#444"/>',
           f'<text x="{_f(x0 + w / 2)}" y="{_f(y0 + 17)}" text-anchor="middle" font-size="13" {FONT}>'
           f'{escape(chart.title)}</text>']
    for t in _ticks(xmin, xmax):
        out.append(f'<line x1="{_f(sx(t))}" y1="{_f(oy + ph)}" x2="{_f(sx(t))}" y2="{_f(oy + ph + 4)}" stroke="#444"/>')
        out.append(f'<text x="{_f(sx(t))}" y="{_f(oy + ph + 16)}" text-anchor="middle" font-size="10" {FONT}>'
                   f'{_label(t)}</text>')
    for t in _ticks(ymin, ymax):
        lab = _label(10 ** t) if chart.log_y else _label(t)
        out.append(f'<line x1="{_f(ox)}" y1="{_f(sy(t))}" x2="{_f(ox + pw)}" y2="{_f(sy(t))}" stroke="#ddd"/>')
        out.append(f'<text x="{_f(ox - 5)}" y="{_f(sy(t) + 3)}" text-anchor="end" font-size="10" {FONT}>'
                   f'{lab}</text>')
    if chart.xlabel:
        out.append(f'<text x="{_f(ox + pw / 2)}" y="{_f(y0 + h - 6)}" text-anchor="middle" font-size="11" {FONT}>'
                   f'{escape(chart.xlabel)}</text>')
    if chart.ylabel:
        cx, cy = x0 + 12, oy + ph / 2
        out.append(f'<text x="{_f(cx)}" y="{_f(cy)}" text-anchor="middle" font-size="11" {FONT} '
                   f'transform="rotate(-90 {_f(cx)} {_f(cy)})">{escape(chart.ylabel)}</text>')
    for k, (s, (x, y)) in enumerate(zip(chart.series, pts)):
        color = PALETTE[k % len(PALETTE)]
        if len(x):
            path = " ".join(f"{_f(sx(a))},{_f(sy(b))}" for a, b in zip(x, y))
            dash = ' stroke-dasharray="5,3"' if s.dashed else ""
            out.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>')
            if s.markers:
                out.extend(f'<circle cx="{_f(sx(a))}" cy="{_f(sy(b))}" r="2" fill="{color}"/>' for a, b in zip(x, y))
        ly = oy + 12 + 14 * k
        out.append(f'<line x1="{_f(ox + pw - 90)}" y1="{_f(ly - 4)}" x2="{_f(ox + pw - 72)}" y2="{_f(ly - 4)}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{_f(ox + pw - 68)}" y="{_f(ly)}" font-size="10" {FONT}>{escape(s.label)}</text>')
    return out


def _document(width: float, height: float, body: list[str]) -> str:
    head = (f'<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(width)}" height="{_f(height)}" '
            f'viewBox="0 0 {_f(width)} {_f(height)}">')
    return "\n".join([head, f'<rect width="{_f(width)}" height="{_f(height)}" fill="white"/>', *body, "</svg>"]) + "\n"


def line_chart(chart: Chart, width: float = 640, height: float = 400) -> str:
    return _document(width, height, _chart_body(chart, 0, 0, width, height))


def panels(charts: Sequence[Chart], ncols: int = 2, panel_w: float = 420, panel_h: float = 300) -> str:
    nrows = max(1, math.ceil(len(charts) / ncols))
    body = []
    for k, c in enumerate(charts):
        r, q = divmod(k, ncols)
        body.extend(_chart_body(c, q * panel_w, r * panel_h, panel_w, panel_h))
    return _document(ncols * panel_w, nrows * panel_h, body)


def _ramp(t: float) -> str:
    """Blue to red through yellow for ``t`` in [0, 1]."""
    stops = ((0.0, (49, 54, 149)), (0.5, (255, 255, 191)), (1.0, (165, 0, 38)))
    t = min(max(t, 0.0), 1.0)
    for (t0, c0), (t1, c1) in zip(stops, stops[1:]):
        if t <= t1:
            a = (t - t0) / (t1 - t0)
            return "#%02x%02x%02x" % tuple(round(c0[i] + a * (c1[i] - c0[i])) for i in range(3))
    return "#%02x%02x%02x" % stops[-1][1]


def grid_plan(nodes, edges, values, title: str, unit: str = "m", vmax: float | None = None,
              width: float = 640, height: float = 480) -> str:
    """Plan view (x, y) of a beam grid with members coloured by the mean nodal value.

    ``vmax`` fixes the top of the colour scale so several figures can share it.
    """
    nodes = np.asarray(nodes, dtype=float)
    edges = np.asarray(edges, dtype=int).reshape(-1, 2)
    values = np.asarray(values, dtype=float)
    top = float(values.max()) if vmax is None and len(values) else float(vmax or 0.0)
    left, right, ttop, bottom = 20.0, 110.0, 34.0, 20.0
    pw, ph = width - left - right, height - ttop - bottom
    xy = nodes[:, :2] if len(nodes) else np.zeros((1, 2))
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    span = np.maximum(hi - lo, 1e-12)
    scale = min(pw / span[0], ph / span[1])
    offx = left + (pw - scale * span[0]) / 2
    offy = ttop + (ph - scale * span[1]) / 2

    def px(p):
        return offx + (p[0] - lo[0]) * scale, offy + (hi[1] - p[1]) * scale

    body = [f'<text x="{_f(width / 2)}" y="20" text-anchor="middle" font-size="14" {FONT}>{escape(title)}</text>']
    for a, b in edges:
        t = 0.5 * (values[a] + values[b]) / top if top > 0 else 0.0
        (x1, y1), (x2, y2) = px(nodes[a]), px(nodes[b])
        body.append(f'<line x1="{_f(x1)}" y1="{_f(y1)}" x2="{_f(x2)}" y2="{_f(y2)}" stroke="{_ramp(t)}" '
                    f'stroke-width="3" stroke-linecap="round"/>')
    for p in nodes:
        x, y = px(p)
        body.append(f'<circle cx="{_f(x)}" cy="{_f(y)}" r="1.8" fill="#222"/>')
    # colour bar
    bx, by, bh = width - right + 30, ttop + 10, ph - 20
    for k in range(50):
        y = by + bh * (1 - (k + 1) / 50)
        body.append(f'<rect x="{_f(bx)}" y="{_f(y)}" width="16" height="{_f(bh / 50 + 0.5)}" '
                    f'fill="{_ramp((k + 0.5) / 50)}"/>')
    body.append(f'<rect x="{_f(bx)}" y="{_f(by)}" width="16" height="{_f(bh)}" fill="none" stroke="#444"/>')
    body.append(f'<text x="{_f(bx + 20)}" y="{_f(by + 4)}" font-size="10" {FONT}>{_label(top)} {escape(unit)}</text>')
    body.append(f'<text x="{_f(bx + 20)}" y="{_f(by + bh + 4)}" font-size="10" {FONT}>0</text>')
    return _document(width, height, body)
