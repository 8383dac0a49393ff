"""Minimal deterministic SVG line plots."""

from __future__ import annotations

from html import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def _fmt(v):
    return f"{v:.2f}"


def _ticks(lo, hi, n=5):
    return np.linspace(lo, hi, n)


def line_plot(series, title="", xlabel="", ylabel="", width=640, height=400, equal_aspect=False):
    """Render ``series``, a list of ``(label, xs, ys)``, as an SVG document string.

    Non-finite samples break a line into separate polylines.
    """
    margin = {"l": 64, "r": 150, "t": 36, "b": 48}
    pw = width - margin["l"] - margin["r"]
    ph = height - margin["t"] - margin["b"]
    xs_all = np.concatenate([np.asarray(s[1], float) for s in series]) if series else np.zeros(1)
    ys_all = np.concatenate([np.asarray(s[2], float) for s in series]) if series else np.zeros(1)
    ok = np.isfinite(xs_all) & np.isfinite(ys_all)
    xs_all, ys_all = (xs_all[ok], ys_all[ok]) if ok.any() else (np.zeros(1), np.zeros(1))
    x0, x1 = float(xs_all.min()), float(xs_all.max())
    y0, y1 = float(ys_all.min()), float(ys_all.max())
    if x1 <= x0:
        x0, x1 = x0 - 1.0, x1 + 1.0
    if y1 <= y0:
        y0, y1 = y0 - 1.0, y1 + 1.0
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad
    if equal_aspect:
        sx, sy = pw / (x1 - x0), ph / (y1 - y0)
        s = min(sx, sy)
        cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
        x0, x1 = cx - 0.5 * pw / s, cx + 0.5 * pw / s
        y0, y1 = cy - 0.5 * ph / s, cy + 0.5 * ph / s

    def px(x):
        return margin["l"] + (x - x0) / (x1 - x0) * pw

    def py(y):
        return margin["t"] + (y1 - y) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{margin["l"]}" y="{margin["t"]}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
    ]
    for tx in _ticks(x0, x1):
        out.append(f'<line x1="{_fmt(px(tx))}" y1="{_fmt(margin["t"] + ph)}" x2="{_fmt(px(tx))}" '
                   f'y2="{_fmt(margin["t"] + ph + 4)}" stroke="#444"/>')
        out.append(f'<text x="{_fmt(px(tx))}" y="{_fmt(margin["t"] + ph + 16)}" '
                   f'text-anchor="middle">{tx:.3g}</text>')
    for ty in _ticks(y0, y1):
        out.append(f'<line x1="{margin["l"] - 4}" y1="{_fmt(py(ty))}" x2="{margin["l"]}" '
                   f'y2="{_fmt(py(ty))}" stroke="#444"/>')
        out.append(f'<text x="{margin["l"] - 6}" y="{_fmt(py(ty) + 4)}" text-anchor="end">{ty:.3g}</text>')
    if title:
        out.append(f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>')
    if xlabel:
        out.append(f'<text x="{_fmt(margin["l"] + pw / 2)}" y="{height - 10}" '
                   f'text-anchor="middle">{escape(xlabel)}</text>')
    if ylabel:
        out.append(f'<text x="14" y="{_fmt(margin["t"] + ph / 2)}" text-anchor="middle" '
                   f'transform="rotate(-90 14 {_fmt(margin["t"] + ph / 2)})">{escape(ylabel)}</text>')
    for k, (label, xs, ys) in enumerate(series):
        color = PALETTE[k % len(PALETTE)]
        xs = np.asarray(xs, float)
        ys = np.asarray(ys, float)
        good = np.isfinite(xs) & np.isfinite(ys)
        run = []
        for x, y, g in zip(xs, ys, good):
            if g:
                run.append(f"{_fmt(px(x))},{_fmt(py(y))}")
            elif run:
                out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{" ".join(run)}"/>')
                run = []
        if run:
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{" ".join(run)}"/>')
        ly = margin["t"] + 14 + 16 * k
        lx = margin["l"] + pw + 10
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 18}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 24}" y="{ly}">{escape(str(label))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
