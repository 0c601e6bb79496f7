"""Minimal deterministic SVG line charts (no external assets)."""

from __future__ import annotations

from typing import Dict, Sequence, Tuple
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, n: int = 5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** np.floor(np.log10(raw))
    step = min((s * mag for s in (1, 2, 5, 10) if s * mag >= raw), default=raw)
    start = np.ceil(lo / step) * step
    ticks = np.arange(start, hi + step * 1e-9, step)
    return [float(t) for t in ticks]


def line_chart(
    series: Dict[str, Tuple[Sequence[float], Sequence[float]]],
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    width: int = 640,
    height: int = 420,
    logy: bool = False,
) -> str:
    """Render named ``(x, y)`` series as an SVG document string.

    Non-finite points are skipped.  Output depends only on the inputs.
    """
    left, right, top, bottom = 70, 160, 40, 55
    pw, ph = width - left - right, height - top - bottom
    xs_all, ys_all = [], []
    clean = {}
    for name, (x, y) in series.items():
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if logy:
            with np.errstate(divide="ignore", invalid="ignore"):
                y = np.where(y > 0, np.log10(y), np.nan)
        ok = np.isfinite(x) & np.isfinite(y)
        clean[name] = (x[ok], y[ok])
        xs_all.append(x[ok])
        ys_all.append(y[ok])
    xs = np.concatenate(xs_all) if xs_all else np.zeros(1)
    ys = np.concatenate(ys_all) if ys_all else np.zeros(1)
    if xs.size == 0:
        xs = ys = np.zeros(1)
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def sx(v):
        return left + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return top + ph - (v - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for t in _ticks(x0, x1):
        if x0 <= t <= x1:
            out.append(f'<line x1="{_fmt(sx(t))}" y1="{top + ph}" x2="{_fmt(sx(t))}" y2="{top + ph + 5}" stroke="black"/>')
            out.append(f'<text x="{_fmt(sx(t))}" y="{top + ph + 18}" text-anchor="middle">{t:g}</text>')
    for t in _ticks(y0, y1):
        if y0 <= t <= y1:
            label = f"1e{t:g}" if logy else f"{t:g}"
            out.append(f'<line x1="{left - 5}" y1="{_fmt(sy(t))}" x2="{left}" y2="{_fmt(sy(t))}" stroke="black"/>')
            out.append(f'<text x="{left - 8}" y="{_fmt(sy(t) + 4)}" text-anchor="end">{label}</text>')
    if title:
        out.append(f'<text x="{left + pw / 2:.2f}" y="{top - 15}" text-anchor="middle" font-size="14">{escape(title)}</text>')
    if xlabel:
        out.append(f'<text x="{left + pw / 2:.2f}" y="{height - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    if ylabel:
        cy = top + ph / 2
        out.append(
            f'<text x="16" y="{cy:.2f}" text-anchor="middle" transform="rotate(-90 16 {cy:.2f})">{escape(ylabel)}</text>'
        )
    for i, (name, (x, y)) in enumerate(clean.items()):
        color = PALETTE[i % len(PALETTE)]
        if x.size:
            pts = " ".join(f"{_fmt(sx(a))},{_fmt(sy(b))}" for a, b in zip(x, y))
            out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.8"/>')
        ly = top + 10 + 18 * i
        out.append(f'<line x1="{left + pw + 12}" y1="{ly}" x2="{left + pw + 32}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 38}" y="{ly + 4}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
