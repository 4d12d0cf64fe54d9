"""Tiny SVG plotter: scatter, polylines, and bar+line panels.

CSV is always the authoritative output of experiments; these renderers exist
so results can be eyeballed without plotting dependencies.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


class SvgPanel:
    """Fixed-size panel with data-space coordinates mapped to pixels."""

    def __init__(self, width: int = 420, height: int = 420, margin: int = 30,
                 title: str = ""):
        self.width = width
        self.height = height
        self.margin = margin
        self.title = title
        self._elems: list[str] = []
        self._pts: list[np.ndarray] = []
        self._cmds: list[tuple] = []

    def add_scatter(self, points, color: str, radius: float = 2.0, opacity: float = 1.0):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        self._pts.append(pts)
        self._cmds.append(("scatter", pts, color, radius, opacity))

    def add_polyline(self, points, color: str, width: float = 1.0, opacity: float = 1.0):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        self._pts.append(pts)
        self._cmds.append(("polyline", pts, color, width, opacity))

    def _transform(self):
        allp = np.concatenate(self._pts) if self._pts else np.zeros((1, 2))
        lo = allp.min(axis=0)
        hi = allp.max(axis=0)
        span = np.maximum(hi - lo, 1e-9)
        pad = 0.05 * span
        lo, hi = lo - pad, hi + pad
        span = hi - lo
        inner_w = self.width - 2 * self.margin
        inner_h = self.height - 2 * self.margin
        scale = min(inner_w / span[0], inner_h / span[1])

        def to_px(p):
            x = self.margin + (p[:, 0] - lo[0]) * scale
            y = self.height - self.margin - (p[:, 1] - lo[1]) * scale
            return x, y
        return to_px

    def render(self) -> str:
        to_px = self._transform()
        out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" '
               f'height="{self.height}" viewBox="0 0 {self.width} {self.height}">',
               f'<rect width="{self.width}" height="{self.height}" fill="white"/>']
        if self.title:
            out.append(f'<text x="{self.width / 2}" y="16" font-size="13" '
                       f'text-anchor="middle" font-family="sans-serif">{self.title}</text>')
        for cmd in self._cmds:
            kind = cmd[0]
            if kind == "scatter":
                _, pts, color, radius, opacity = cmd
                x, y = to_px(pts)
                for xi, yi in zip(x, y):
                    out.append(f'<circle cx="{xi:.1f}" cy="{yi:.1f}" r="{radius}" '
                               f'fill="{color}" fill-opacity="{opacity}"/>')
            else:
                _, pts, color, width, opacity = cmd
                x, y = to_px(pts)
                path = " ".join(f"{xi:.1f},{yi:.1f}" for xi, yi in zip(x, y))
                out.append(f'<polyline points="{path}" fill="none" stroke="{color}" '
                           f'stroke-width="{width}" stroke-opacity="{opacity}"/>')
        out.append("</svg>")
        return "\n".join(out)

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.render())
        return path


def regime_panel(train_points, seeds, flows, samples, title: str = "",
                 max_flows: int = 120) -> SvgPanel:
    """One generalization-regime panel: orange training points, black seeds,
    cyan denoising flow polylines, blue final samples."""
    panel = SvgPanel(title=title)
    if flows is not None:
        for i in range(min(max_flows, len(flows))):
            panel.add_polyline(flows[i], "#9fe8ef", width=0.6, opacity=0.55)
    if seeds is not None:
        panel.add_scatter(seeds, "#222222", radius=1.4, opacity=0.8)
    panel.add_scatter(samples, "#1f4fd8", radius=1.8, opacity=0.9)
    panel.add_scatter(train_points, "#f08c00", radius=2.4)
    return panel


def bars_line_svg(bars, line=None, title: str = "", width: int = 560,
                  height: int = 300, bar_color: str = "#3b6fd4",
                  line_color: str = "#f08c00") -> str:
    """Bar chart (e.g. per-trajectory similarity) with an optional overlaid
    line series (e.g. distances) on its own scale."""
    bars = np.asarray(bars, dtype=float)
    n = len(bars)
    margin = 34
    inner_w = width - 2 * margin
    inner_h = height - 2 * margin
    lo = min(0.0, float(bars.min()))
    hi = max(1.0, float(bars.max()))
    span = hi - lo or 1.0
    bw = inner_w / max(n, 1)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>']
    if title:
        out.append(f'<text x="{width / 2}" y="16" font-size="13" text-anchor="middle" '
                   f'font-family="sans-serif">{title}</text>')
    y0 = height - margin - (0.0 - lo) / span * inner_h
    out.append(f'<line x1="{margin}" y1="{y0:.1f}" x2="{width - margin}" y2="{y0:.1f}" '
               f'stroke="#999" stroke-width="0.7"/>')
    for i, v in enumerate(bars):
        x = margin + i * bw
        y = height - margin - (v - lo) / span * inner_h
        h = abs(y - y0)
        top = min(y, y0)
        out.append(f'<rect x="{x + 1:.1f}" y="{top:.1f}" width="{max(bw - 2, 1):.1f}" '
                   f'height="{h:.1f}" fill="{bar_color}"/>')
    if line is not None:
        line = np.asarray(line, dtype=float)
        lmax = float(line.max()) or 1.0
        pts = []
        for i, v in enumerate(line):
            x = margin + (i + 0.5) * bw
            y = height - margin - (v / lmax) * inner_h
            pts.append(f"{x:.1f},{y:.1f}")
        out.append(f'<polyline points="{" ".join(pts)}" fill="none" '
                   f'stroke="{line_color}" stroke-width="1.6"/>')
    out.append("</svg>")
    return "\n".join(out)
