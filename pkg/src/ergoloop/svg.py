"""Minimal deterministic SVG line charts (mean line plus a one-std band)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 640, 400
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 20, 40, 50
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


@dataclass
class Series:
    x: np.ndarray
    y: np.ndarray
    label: str
    band: Optional[np.ndarray] = None  # half-width of the shaded band


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    out, v = [], start
    while v <= hi + 1e-9 * step:
        out.append(round(v, 12))
        v += step
    return out


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def line_chart(series: Sequence[Series], title: str, xlabel: str, ylabel: str,
               hlines: Sequence[float] = ()) -> str:
    """Render series as polylines; bands become filled polygons."""
    xs = np.concatenate([np.asarray(s.x, dtype=float) for s in series])
    lows, highs = [], []
    for s in series:
        y = np.asarray(s.y, dtype=float)
        b = np.zeros_like(y) if s.band is None else np.asarray(s.band, dtype=float)
        lows.append(np.nanmin(y - b))
        highs.append(np.nanmax(y + b))
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(min(lows + list(hlines))), float(max(highs + list(hlines)))
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad
    pw, ph = WIDTH - MARGIN_L - MARGIN_R, HEIGHT - MARGIN_T - MARGIN_B

    def px(x):
        return MARGIN_L + (np.asarray(x, dtype=float) - x0) / (x1 - x0) * pw

    def py(y):
        return MARGIN_T + (y1 - np.asarray(y, dtype=float)) / (y1 - y0) * ph

    def points(xv, yv):
        return " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(px(xv), py(yv)))

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="22" text-anchor="middle" font-size="15" '
        f'font-family="sans-serif">{escape(title)}</text>',
    ]
    for h in hlines:
        yy = _fmt(float(py(h)))
        out.append(f'<line x1="{MARGIN_L}" y1="{yy}" x2="{WIDTH - MARGIN_R}" y2="{yy}" '
                   'stroke="#cccccc" stroke-width="0.5"/>')
    for n, s in enumerate(series):
        color = PALETTE[n % len(PALETTE)]
        if s.band is not None:
            lo = np.asarray(s.y) - np.asarray(s.band)
            hi = np.asarray(s.y) + np.asarray(s.band)
            poly = points(s.x, hi) + " " + points(np.asarray(s.x)[::-1], lo[::-1])
            out.append(f'<polygon points="{poly}" fill="{color}" fill-opacity="0.2" '
                       'stroke="none"/>')
        out.append(f'<polyline points="{points(s.x, s.y)}" fill="none" stroke="{color}" '
                   'stroke-width="1.2"/>')
        ly = MARGIN_T + 14 + 16 * n
        out.append(f'<line x1="{WIDTH - MARGIN_R - 150}" y1="{ly}" '
                   f'x2="{WIDTH - MARGIN_R - 130}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{WIDTH - MARGIN_R - 125}" y="{ly + 4}" font-size="11" '
                   f'font-family="sans-serif">{escape(s.label)}</text>')
    bottom, right = HEIGHT - MARGIN_B, WIDTH - MARGIN_R
    out.append(f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" '
               'fill="none" stroke="black" stroke-width="1"/>')
    for t in _ticks(x0, x1):
        xx = _fmt(float(px(t)))
        out.append(f'<line x1="{xx}" y1="{bottom}" x2="{xx}" y2="{bottom + 5}" stroke="black"/>')
        out.append(f'<text x="{xx}" y="{bottom + 18}" text-anchor="middle" font-size="11" '
                   f'font-family="sans-serif">{t:g}</text>')
    for t in _ticks(y0, y1):
        yy = _fmt(float(py(t)))
        out.append(f'<line x1="{MARGIN_L - 5}" y1="{yy}" x2="{MARGIN_L}" y2="{yy}" stroke="black"/>')
        out.append(f'<text x="{MARGIN_L - 8}" y="{yy}" text-anchor="end" font-size="11" '
                   f'dominant-baseline="middle" font-family="sans-serif">{t:g}</text>')
    out.append(f'<text x="{(MARGIN_L + right) / 2}" y="{HEIGHT - 10}" text-anchor="middle" '
               f'font-size="13" font-family="sans-serif">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{(MARGIN_T + bottom) / 2}" text-anchor="middle" font-size="13" '
               f'font-family="sans-serif" transform="rotate(-90 16 {(MARGIN_T + bottom) / 2})">'
               f'{escape(ylabel)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
