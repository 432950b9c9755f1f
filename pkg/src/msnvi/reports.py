"""Deterministic CSV and minimal SVG output.

Floats are rendered with repr (shortest round-trip form), so two runs with
the same seed produce byte-identical files. SVG plots carry axes, points,
lines and bands only; they are derived from already-written values and
never feed back into any CSV.
"""

from __future__ import annotations

import csv
import os

import numpy as np


def fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return str(x)


def write_csv(path, header, rows) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    return rows[0], rows[1:]


# ---------------------------------------------------------------------------
# SVG

_W, _H = 640, 480
_MARGIN = 56

PALETTE = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
    "#8c564b", "#17becf", "#7f7f7f", "#bcbd22", "#e377c2",
]


class _Frame:
    def __init__(self, xlim, ylim):
        self.x0, self.x1 = xlim
        self.y0, self.y1 = ylim
        dx = (self.x1 - self.x0) or 1.0
        dy = (self.y1 - self.y0) or 1.0
        self.sx = (_W - 2 * _MARGIN) / dx
        self.sy = (_H - 2 * _MARGIN) / dy

    def x(self, v):
        return _MARGIN + (v - self.x0) * self.sx

    def y(self, v):
        return _H - _MARGIN - (v - self.y0) * self.sy


def _limits(values, pad=0.05):
    lo = float(np.min(values))
    hi = float(np.max(values))
    span = (hi - lo) or 1.0
    return lo - pad * span, hi + pad * span


def _header(title):
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2}" y="24" text-anchor="middle" font-size="15" '
        f'font-family="sans-serif">{title}</text>',
    ]


def _axes(fr, xlabel, ylabel):
    parts = [
        f'<line x1="{_MARGIN}" y1="{_H - _MARGIN}" x2="{_W - _MARGIN}" '
        f'y2="{_H - _MARGIN}" stroke="black"/>',
        f'<line x1="{_MARGIN}" y1="{_MARGIN}" x2="{_MARGIN}" '
        f'y2="{_H - _MARGIN}" stroke="black"/>',
        f'<text x="{_W / 2}" y="{_H - 16}" text-anchor="middle" font-size="12" '
        f'font-family="sans-serif">{xlabel}</text>',
        f'<text x="16" y="{_H / 2}" font-size="12" font-family="sans-serif" '
        f'transform="rotate(-90 16 {_H / 2})" text-anchor="middle">{ylabel}</text>',
    ]
    for v, anchor in ((fr.x0, "start"), (fr.x1, "end")):
        parts.append(
            f'<text x="{fr.x(v):.1f}" y="{_H - _MARGIN + 16}" text-anchor="{anchor}" '
            f'font-size="10" font-family="sans-serif">{v:.3g}</text>'
        )
    for v in (fr.y0, fr.y1):
        parts.append(
            f'<text x="{_MARGIN - 6}" y="{fr.y(v):.1f}" text-anchor="end" '
            f'font-size="10" font-family="sans-serif">{v:.3g}</text>'
        )
    return parts


def _legend(labels_colors):
    parts = []
    for i, (label, color) in enumerate(labels_colors):
        y = _MARGIN + 14 * i
        parts.append(
            f'<rect x="{_W - _MARGIN - 130}" y="{y - 8}" width="10" height="10" '
            f'fill="{color}"/>'
        )
        parts.append(
            f'<text x="{_W - _MARGIN - 115}" y="{y}" font-size="10" '
            f'font-family="sans-serif">{label}</text>'
        )
    return parts


def svg_scatter(path, groups, title="", xlabel="x", ylabel="y", circles=()) -> str:
    """groups: (label, color, (N, 2) points); circles: (cx, cy, r) outlines."""
    allpts = np.concatenate(
        [np.asarray(p).reshape(-1, 2) for _, _, p in groups]
        + [np.array([[cx - r, cy - r], [cx + r, cy + r]]) for cx, cy, r in circles]
    )
    fr = _Frame(_limits(allpts[:, 0]), _limits(allpts[:, 1]))
    parts = _header(title)
    for cx, cy, r in circles:
        rx = abs(fr.x(cx + r) - fr.x(cx))
        ry = abs(fr.y(cy + r) - fr.y(cy))
        parts.append(
            f'<ellipse cx="{fr.x(cx):.2f}" cy="{fr.y(cy):.2f}" rx="{rx:.2f}" '
            f'ry="{ry:.2f}" fill="none" stroke="#cccccc"/>'
        )
    for label, color, pts in groups:
        for px, py in np.asarray(pts).reshape(-1, 2):
            parts.append(
                f'<circle cx="{fr.x(px):.2f}" cy="{fr.y(py):.2f}" r="2.5" '
                f'fill="{color}" fill-opacity="0.7"/>'
            )
    parts += _axes(fr, xlabel, ylabel)
    parts += _legend([(l, c) for l, c, _ in groups])
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(parts) + "\n")
    return path


def svg_lines(path, series, bands=(), title="", xlabel="x", ylabel="y", vlines=()) -> str:
    """series: (label, color, xs, ys); bands: (color, xs, lo, hi) filled areas."""
    xs_all = np.concatenate([np.asarray(s[2], float) for s in series])
    ys_all = np.concatenate(
        [np.asarray(s[3], float) for s in series]
        + [np.asarray(b[2], float) for b in bands]
        + [np.asarray(b[3], float) for b in bands]
    )
    fr = _Frame(_limits(xs_all), _limits(ys_all))
    parts = _header(title)
    for color, xs, lo, hi in bands:
        fwd = [f"{fr.x(x):.2f},{fr.y(v):.2f}" for x, v in zip(xs, hi)]
        rev = [f"{fr.x(x):.2f},{fr.y(v):.2f}" for x, v in zip(xs[::-1], lo[::-1])]
        parts.append(
            f'<polygon points="{" ".join(fwd + rev)}" fill="{color}" '
            f'fill-opacity="0.25" stroke="none"/>'
        )
    for label, color, xs, ys in series:
        pts = " ".join(f"{fr.x(x):.2f},{fr.y(y):.2f}" for x, y in zip(xs, ys))
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
    for xv in vlines:
        parts.append(
            f'<line x1="{fr.x(xv):.2f}" y1="{_MARGIN}" x2="{fr.x(xv):.2f}" '
            f'y2="{_H - _MARGIN}" stroke="#888888" stroke-dasharray="4 3"/>'
        )
    parts += _axes(fr, xlabel, ylabel)
    parts += _legend([(s[0], s[1]) for s in series])
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(parts) + "\n")
    return path
