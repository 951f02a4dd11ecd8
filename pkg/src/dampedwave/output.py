"""CSV and SVG writers for experiment tables."""

from __future__ import annotations

import io
from typing import Iterable
from xml.sax.saxutils import escape

import numpy as np

from .experiments import Plot, Table


def format_value(v) -> str:
    """Scientific notation with 6 significant digits; ints and strings verbatim."""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if np.isnan(v):
            return "nan"
        if np.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.5e}"
    return str(v)


def render_csv(table: Table, header: str) -> str:
    buf = io.StringIO()
    buf.write(f"# {header}\n")
    buf.write(",".join(table.columns) + "\n")
    for row in table.rows:
        buf.write(",".join(format_value(v) for v in row) + "\n")
    for note in table.notes:
        buf.write(f"# {note}\n")
    return buf.getvalue()


# plot geometry in SVG user units
_W, _H = 640, 420
_LEFT, _RIGHT, _TOP, _BOTTOM = 70, 170, 30, 50
_COLORS = ["#1f4e9c", "#c0392b", "#2e8b57", "#8e44ad", "#d68910", "#17a2b8", "#555555"]


def _axis(values: np.ndarray, log: bool):
    v = values[np.isfinite(values)]
    if log:
        v = v[v > 0]
    if v.size == 0:
        return 0.0, 1.0
    lo, hi = (np.log10(v.min()), np.log10(v.max())) if log else (v.min(), v.max())
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    if log:
        lo, hi = np.floor(lo), np.ceil(hi)
    return float(lo), float(hi)


def _ticks(lo: float, hi: float, log: bool) -> Iterable[tuple[float, str]]:
    if log:
        step = max(1, int(np.ceil((hi - lo) / 8)))
        for e in range(int(lo), int(hi) + 1, step):
            yield float(e), f"1e{e}"
    else:
        for v in np.linspace(lo, hi, 5):
            yield float(v), f"{v:.3g}"


def render_svg(plot: Plot) -> str:
    """Native polyline plot with optional log axes (non-positive values are skipped)."""
    xs = np.concatenate([np.asarray(s[1], float) for s in plot.series]) if plot.series else np.zeros(1)
    ys = np.concatenate([np.asarray(s[2], float) for s in plot.series]) if plot.series else np.zeros(1)
    x0, x1 = _axis(xs, plot.logx)
    y0, y1 = _axis(ys, plot.logy)
    pw, ph = _W - _LEFT - _RIGHT, _H - _TOP - _BOTTOM

    def tx(v):
        return _LEFT + (v - x0) / (x1 - x0) * pw

    def ty(v):
        return _TOP + ph - (v - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="11">',
        f'<rect x="{_LEFT}" y="{_TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
        f'<text x="{_LEFT + pw / 2:.1f}" y="18" text-anchor="middle">{escape(plot.title)}</text>',
        f'<text x="{_LEFT + pw / 2:.1f}" y="{_H - 10}" text-anchor="middle">{escape(plot.xlabel)}</text>',
        f'<text x="15" y="{_TOP + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 15 {_TOP + ph / 2:.1f})">{escape(plot.ylabel)}</text>',
    ]
    for v, lab in _ticks(x0, x1, plot.logx):
        out.append(f'<text x="{tx(v):.1f}" y="{_TOP + ph + 15}" text-anchor="middle">{lab}</text>')
    for v, lab in _ticks(y0, y1, plot.logy):
        out.append(f'<line x1="{_LEFT}" x2="{_LEFT + pw}" y1="{ty(v):.1f}" y2="{ty(v):.1f}" '
                   f'stroke="#dddddd"/>')
        out.append(f'<text x="{_LEFT - 5}" y="{ty(v) + 4:.1f}" text-anchor="end">{lab}</text>')
    for i, (label, x, y) in enumerate(plot.series):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        keep = np.isfinite(x) & np.isfinite(y)
        if plot.logx:
            keep &= x > 0
        if plot.logy:
            keep &= y > 0
        x, y = x[keep], y[keep]
        if plot.logx:
            x = np.log10(x)
        if plot.logy:
            y = np.log10(y)
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(f"{tx(a):.2f},{ty(b):.2f}" for a, b in zip(x, y))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = _TOP + 12 + 16 * i
        out.append(f'<line x1="{_W - _RIGHT + 10}" x2="{_W - _RIGHT + 30}" y1="{ly}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{_W - _RIGHT + 35}" y="{ly + 4}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
