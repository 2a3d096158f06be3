"""Minimal static SVG line plots and heatmaps."""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def _ticks(lo, hi, n=5):
    if not np.isfinite(lo) or not np.isfinite(hi) or hi == lo:
        return [lo]
    return list(np.linspace(lo, hi, n))


def _fmt(v):
    return f"{v:.3g}"


class _Frame:
    def __init__(self, width, height, margin=(60, 20, 30, 45)):
        self.w, self.h = width, height
        self.ml, self.mr, self.mt, self.mb = margin
        self.parts = []

    def set_limits(self, xlo, xhi, ylo, yhi):
        if xhi == xlo:
            xhi = xlo + 1.0
        if yhi == ylo:
            yhi = ylo + 1.0
        self.xlo, self.xhi, self.ylo, self.yhi = xlo, xhi, ylo, yhi

    def px(self, x):
        return self.ml + (x - self.xlo) / (self.xhi - self.xlo) * (self.w - self.ml - self.mr)

    def py(self, y):
        return self.h - self.mb - (y - self.ylo) / (self.yhi - self.ylo) * (self.h - self.mt - self.mb)

    def axes(self, title, xlabel, ylabel, ylog=False):
        x0, x1 = self.ml, self.w - self.mr
        y0, y1 = self.h - self.mb, self.mt
        p = self.parts
        p.append(f'<rect x="{x0}" y="{y1}" width="{x1 - x0}" height="{y0 - y1}" fill="none" stroke="#333"/>')
        for t in _ticks(self.xlo, self.xhi):
            X = self.px(t)
            p.append(f'<line x1="{X:.1f}" y1="{y0}" x2="{X:.1f}" y2="{y0 + 4}" stroke="#333"/>')
            p.append(f'<text x="{X:.1f}" y="{y0 + 16}" font-size="10" text-anchor="middle">{_fmt(t)}</text>')
        for t in _ticks(self.ylo, self.yhi):
            Y = self.py(t)
            lab = _fmt(10 ** t) if ylog else _fmt(t)
            p.append(f'<line x1="{x0 - 4}" y1="{Y:.1f}" x2="{x0}" y2="{Y:.1f}" stroke="#333"/>')
            p.append(f'<text x="{x0 - 6}" y="{Y + 3:.1f}" font-size="10" text-anchor="end">{lab}</text>')
        p.append(f'<text x="{self.w / 2}" y="16" font-size="13" text-anchor="middle">{escape(title)}</text>')
        p.append(f'<text x="{(x0 + x1) / 2}" y="{self.h - 8}" font-size="11" text-anchor="middle">'
                 f'{escape(xlabel)}</text>')
        p.append(f'<text x="14" y="{(y0 + y1) / 2}" font-size="11" text-anchor="middle" '
                 f'transform="rotate(-90 14 {(y0 + y1) / 2})">{escape(ylabel)}</text>')

    def svg(self):
        body = "\n".join(self.parts)
        return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.w}" height="{self.h}" '
                f'viewBox="0 0 {self.w} {self.h}">\n<rect width="100%" height="100%" fill="white"/>\n'
                f"{body}\n</svg>\n")


def line_plot(path, series, title="", xlabel="", ylabel="", ylog=False, width=640, height=400):
    """Write an SVG with one polyline per ``(label, x, y)`` in ``series``."""
    fr = _Frame(width, height)
    clean = []
    for label, x, y in series:
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if ylog:
            y = np.where(y > 0, np.log10(np.where(y > 0, y, 1.0)), np.nan)
        clean.append((label, x, y))
    xs = np.concatenate([c[1][np.isfinite(c[2])] for c in clean] or [np.zeros(1)])
    ys = np.concatenate([c[2][np.isfinite(c[2])] for c in clean] or [np.zeros(1)])
    if xs.size == 0:
        xs = ys = np.zeros(1)
    fr.set_limits(float(xs.min()), float(xs.max()), float(ys.min()), float(ys.max()))
    fr.axes(title, xlabel, ylabel, ylog)
    for k, (label, x, y) in enumerate(clean):
        color = PALETTE[k % len(PALETTE)]
        ok = np.isfinite(x) & np.isfinite(y)
        pts = " ".join(f"{fr.px(a):.1f},{fr.py(b):.1f}" for a, b in zip(x[ok], y[ok]))
        fr.parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = fr.mt + 14 + 14 * k
        lx = fr.w - fr.mr - 150
        fr.parts.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 18}" y2="{ly - 4}" stroke="{color}" '
                        f'stroke-width="2"/>')
        fr.parts.append(f'<text x="{lx + 22}" y="{ly}" font-size="10">{escape(str(label))}</text>')
    with open(path, "w") as fh:
        fh.write(fr.svg())


def _diverging(v, vmax):
    t = 0.0 if vmax == 0 or not np.isfinite(v) else max(-1.0, min(1.0, v / vmax))
    if not np.isfinite(v):
        return "#cccccc"
    if t >= 0:
        r, g, b = 255 - int(200 * t), 255 - int(150 * t), 255
    else:
        r, g, b = 255, 255 + int(150 * t), 255 + int(200 * t)
    return f"rgb({r},{g},{b})"


def heatmap(path, xs, ys, Z, title="", xlabel="", ylabel="", width=520, height=460):
    """Diverging-colour heatmap of ``Z[iy, ix]`` (blue positive, red negative)."""
    Z = np.asarray(Z, dtype=np.float64)
    fr = _Frame(width, height, margin=(60, 20, 30, 45))
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    fr.set_limits(float(xs.min()), float(xs.max()), float(ys.min()), float(ys.max()))
    finite = Z[np.isfinite(Z)]
    vmax = float(np.max(np.abs(finite))) if finite.size else 1.0
    dx = (xs.max() - xs.min()) / max(len(xs) - 1, 1)
    dy = (ys.max() - ys.min()) / max(len(ys) - 1, 1)
    for iy, yv in enumerate(ys):
        for ix, xv in enumerate(xs):
            x0, x1 = fr.px(xv - dx / 2), fr.px(xv + dx / 2)
            y0, y1 = fr.py(yv + dy / 2), fr.py(yv - dy / 2)
            fr.parts.append(f'<rect x="{x0:.1f}" y="{y0:.1f}" width="{x1 - x0 + 0.5:.1f}" '
                            f'height="{y1 - y0 + 0.5:.1f}" fill="{_diverging(Z[iy, ix], vmax)}"/>')
    fr.axes(title + f"  (|max| = {_fmt(vmax)})", xlabel, ylabel)
    with open(path, "w") as fh:
        fh.write(fr.svg())
