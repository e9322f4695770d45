"""Minimal static SVG charts: heatmaps, line series with significance shading, bar histograms."""
from __future__ import annotations

from html import escape
from pathlib import Path
from typing import Sequence

import numpy as np

# increase / decrease shading, forced / baseline curves
RED = "#d62728"
BLUE = "#1f77b4"
SHADE_UP = "#f4a6a6"
SHADE_DOWN = "#a6c8f4"

# sequential palette for categorical cluster ids, cold to warm
PALETTE = ["#08306b", "#2171b5", "#6baed6", "#fcbba1", "#fb6a4a", "#cb181d", "#67000d", "#3f007d", "#54278f", "#807dba"]


def _num(x: float) -> str:
    return f"{x:.2f}".rstrip("0").rstrip(".")


class Svg:
    def __init__(self, width: float, height: float):
        self.width, self.height = width, height
        self.parts: list[str] = []

    def rect(self, x, y, w, h, fill, **attrs):
        extra = "".join(f' {k.replace("_", "-")}="{v}"' for k, v in attrs.items())
        self.parts.append(
            f'<rect x="{_num(x)}" y="{_num(y)}" width="{_num(w)}" height="{_num(h)}" fill="{fill}"{extra}/>'
        )

    def line(self, x1, y1, x2, y2, stroke="#000", width=1.0, dash=None):
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(
            f'<line x1="{_num(x1)}" y1="{_num(y1)}" x2="{_num(x2)}" y2="{_num(y2)}" '
            f'stroke="{stroke}" stroke-width="{_num(width)}"{d}/>'
        )

    def polyline(self, xs, ys, stroke, width=1.0, opacity=1.0):
        pts = " ".join(f"{_num(x)},{_num(y)}" for x, y in zip(xs, ys) if np.isfinite(y))
        self.parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{stroke}" '
            f'stroke-width="{_num(width)}" stroke-opacity="{_num(opacity)}"/>'
        )

    def text(self, x, y, s, size=11, anchor="start"):
        self.parts.append(
            f'<text x="{_num(x)}" y="{_num(y)}" font-size="{size}" font-family="sans-serif" '
            f'text-anchor="{anchor}">{escape(str(s))}</text>'
        )

    def render(self) -> str:
        head = (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_num(self.width)}" '
            f'height="{_num(self.height)}" viewBox="0 0 {_num(self.width)} {_num(self.height)}">'
        )
        return "\n".join([head, f'<rect width="100%" height="100%" fill="#fff"/>', *self.parts, "</svg>"]) + "\n"

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.render(), encoding="utf-8", newline="")
        return path


def _shade(svg, x0, y0, pw, ph, flags, T):
    dx = pw / max(T, 1)
    for t, f in enumerate(flags):
        if f > 0:
            svg.rect(x0 + t * dx, y0, dx, ph, SHADE_UP)
        elif f < 0:
            svg.rect(x0 + t * dx, y0, dx, ph, SHADE_DOWN)


def _axes(svg, x0, y0, pw, ph, lo, hi, title, T):
    svg.rect(x0, y0, pw, ph, "none", stroke="#333")
    svg.text(x0, y0 - 6, title, size=12)
    svg.text(x0 - 4, y0 + 10, _num(hi), size=9, anchor="end")
    svg.text(x0 - 4, y0 + ph, _num(lo), size=9, anchor="end")
    svg.text(x0 + pw, y0 + ph + 12, f"t={T - 1}", size=9, anchor="end")
    svg.text(x0, y0 + ph + 12, "t=0", size=9)


def series_panel(
    svg: Svg,
    x0: float,
    y0: float,
    pw: float,
    ph: float,
    forced: Sequence[np.ndarray],
    baseline: Sequence[np.ndarray],
    flags=None,
    title: str = "",
    hlines: Sequence[float] = (),
    vline: int | None = None,
):
    """Forced members in red, baseline in blue; significance shading behind."""
    allv = np.concatenate([np.ravel(a) for a in list(forced) + list(baseline)] + [np.asarray(hlines, float)])
    allv = allv[np.isfinite(allv)]
    lo, hi = (float(allv.min()), float(allv.max())) if allv.size else (0.0, 1.0)
    if hi == lo:
        hi = lo + 1.0
    T = len(forced[0]) if forced else len(baseline[0])
    if flags is not None:
        _shade(svg, x0, y0, pw, ph, flags, T)
    xs = x0 + (np.arange(T) + 0.5) * pw / T

    def ys(v):
        return y0 + ph - (np.asarray(v, float) - lo) / (hi - lo) * ph

    for h in hlines:
        y = ys([h])[0]
        svg.line(x0, y, x0 + pw, y, stroke=RED, width=0.8)
    if vline is not None:
        x = x0 + (vline + 0.5) * pw / T
        svg.line(x, y0, x, y0 + ph, stroke="#000", width=0.8, dash="4,3")
    for s in baseline:
        svg.polyline(xs, ys(s), BLUE, width=0.8, opacity=0.8)
    for s in forced:
        svg.polyline(xs, ys(s), RED, width=0.8, opacity=0.8)
    _axes(svg, x0, y0, pw, ph, lo, hi, title, T)


def timeline_chart(panels: Sequence[dict], width: float = 900, panel_height: float = 140) -> Svg:
    """Stack of :func:`series_panel` panels; each dict holds its keyword arguments."""
    gap = 40
    svg = Svg(width, gap + len(panels) * (panel_height + gap))
    for i, kw in enumerate(panels):
        series_panel(svg, 60, gap + i * (panel_height + gap), width - 80, panel_height, **kw)
    return svg


def heatmap(matrix: np.ndarray, title: str = "", cell_w: float = 2.0, cell_h: float = 8.0, row_labels=None, palette=PALETTE) -> Svg:
    """Categorical heatmap of integer ids; row 0 drawn at the bottom, negative ids left blank."""
    m = np.asarray(matrix)
    nrow, ncol = m.shape
    left, top = 60, 30
    svg = Svg(left + ncol * cell_w + 20, top + nrow * cell_h + 30)
    svg.text(left, top - 10, title, size=12)
    for r in range(nrow):
        y = top + (nrow - 1 - r) * cell_h
        c = 0
        # merge horizontal runs of one colour into single rects
        while c < ncol:
            v = int(m[r, c])
            e = c
            while e + 1 < ncol and int(m[r, e + 1]) == v:
                e += 1
            if v >= 0:
                svg.rect(left + c * cell_w, y, (e - c + 1) * cell_w, cell_h, palette[v % len(palette)])
            c = e + 1
        if row_labels is not None and r % max(1, nrow // 8) == 0:
            svg.text(left - 4, y + cell_h, _num(row_labels[r]), size=9, anchor="end")
    svg.rect(left, top, ncol * cell_w, nrow * cell_h, "none", stroke="#333")
    return svg


def partition_map(active: np.ndarray, nlat_bands: int, nlon_bands: int, title: str = "", cell: float = 12.0, marker=None) -> Svg:
    """Partitions marked red where active; north up."""
    a = np.asarray(active, bool).reshape(nlat_bands, nlon_bands)
    left, top = 10, 30
    svg = Svg(left * 2 + nlon_bands * cell, top + nlat_bands * cell + 10)
    svg.text(left, top - 10, title, size=12)
    svg.rect(left, top, nlon_bands * cell, nlat_bands * cell, "#eeeeee")
    for r in range(nlat_bands):
        y = top + (nlat_bands - 1 - r) * cell
        for c in range(nlon_bands):
            if a[r, c]:
                svg.rect(left + c * cell, y, cell, cell, RED)
    if marker is not None:
        r, c = marker
        svg.rect(left + c * cell + cell / 4, top + (nlat_bands - 1 - r) * cell + cell / 4, cell / 2, cell / 2, "#000")
    svg.rect(left, top, nlon_bands * cell, nlat_bands * cell, "none", stroke="#333")
    return svg


def histogram(hists: dict, title: str = "", width: float = 600, height: float = 240) -> Svg:
    """Side-by-side bars per arm for integer-keyed histograms (e.g. durations)."""
    keys = sorted({k for h in hists.values() for k in h})
    svg = Svg(width, height)
    svg.text(50, 20, title, size=12)
    if not keys:
        svg.text(50, height / 2, "no instances", size=11)
        return svg
    arms = list(hists)
    colors = {arm: (RED if arm == "forced" else BLUE) for arm in arms}
    top = max(max(h.values()) for h in hists.values() if h) or 1
    x0, y0, pw, ph = 50, 30, width - 70, height - 60
    lo, hi = keys[0], keys[-1]
    slot = pw / (hi - lo + 1)
    bw = slot / max(len(arms), 1)
    for i, arm in enumerate(arms):
        for k, v in hists[arm].items():
            h = v / top * ph
            svg.rect(x0 + (k - lo) * slot + i * bw, y0 + ph - h, bw, h, colors[arm])
    svg.rect(x0, y0, pw, ph, "none", stroke="#333")
    svg.text(x0, y0 + ph + 14, str(lo), size=9)
    svg.text(x0 + pw, y0 + ph + 14, str(hi), size=9, anchor="end")
    svg.text(x0 - 4, y0 + 10, str(top), size=9, anchor="end")
    return svg
