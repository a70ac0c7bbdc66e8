"""Hand-rolled SVG emission for fronts, curves, maps and attention.

No plotting dependency: each function writes a standalone .svg built from
rects, circles, paths and text.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .world import Scenario


def _svg(width: int, height: int, body: list[str]) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">'
    )
    return "\n".join(
        [head, f'<rect width="{width}" height="{height}" fill="white"/>']
        + body + ["</svg>"]
    )


def _write(path: str | Path, content: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(content)
    return path


class _Axes:
    """Linear data-to-pixel mapping with a small margin."""

    def __init__(self, xs, ys, width=520, height=400, margin=55):
        self.width, self.height, self.margin = width, height, margin
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        self.x0, self.x1 = float(xs.min()), float(xs.max())
        self.y0, self.y1 = float(ys.min()), float(ys.max())
        if self.x1 == self.x0:
            self.x1 += 1.0
        if self.y1 == self.y0:
            self.y1 += 1.0

    def px(self, x: float) -> float:
        span = self.width - 2 * self.margin
        return self.margin + (x - self.x0) / (self.x1 - self.x0) * span

    def py(self, y: float) -> float:
        span = self.height - 2 * self.margin
        return self.height - self.margin - (y - self.y0) / (self.y1 - self.y0) * span

    def frame(self, xlabel: str, ylabel: str, title: str) -> list[str]:
        m, w, h = self.margin, self.width, self.height
        out = [
            f'<rect x="{m}" y="{m}" width="{w - 2 * m}" height="{h - 2 * m}" '
            'fill="none" stroke="black"/>',
            f'<text x="{w / 2}" y="{h - 12}" text-anchor="middle" '
            f'font-size="13">{xlabel}</text>',
            f'<text x="14" y="{h / 2}" text-anchor="middle" font-size="13" '
            f'transform="rotate(-90 14 {h / 2})">{ylabel}</text>',
            f'<text x="{w / 2}" y="22" text-anchor="middle" '
            f'font-size="14">{title}</text>',
            f'<text x="{m}" y="{h - m + 16}" font-size="10" '
            f'text-anchor="middle">{self.x0:.3g}</text>',
            f'<text x="{w - m}" y="{h - m + 16}" font-size="10" '
            f'text-anchor="middle">{self.x1:.3g}</text>',
            f'<text x="{m - 6}" y="{h - m}" font-size="10" '
            f'text-anchor="end">{self.y0:.3g}</text>',
            f'<text x="{m - 6}" y="{m + 4}" font-size="10" '
            f'text-anchor="end">{self.y1:.3g}</text>',
        ]
        return out


def plot_pareto(points, dominated_mask, path, title="Return points",
                xlabel="collected %", ylabel="-energy") -> Path:
    """Scatter of return points: front members filled, dominated ones open."""
    points = np.asarray(points, dtype=float)
    dominated_mask = np.asarray(dominated_mask, dtype=bool)
    ax = _Axes(points[:, 0], points[:, 1])
    body = ax.frame(xlabel, ylabel, title)
    front = points[~dominated_mask]
    order = np.argsort(front[:, 0])
    line = " ".join(
        f"{ax.px(x):.1f},{ax.py(y):.1f}" for x, y in front[order]
    )
    if len(front) > 1:
        body.append(
            f'<polyline points="{line}" fill="none" stroke="#1f77b4" '
            'stroke-dasharray="4 3"/>'
        )
    for (x, y), dom in zip(points, dominated_mask):
        if dom:
            body.append(
                f'<circle cx="{ax.px(x):.1f}" cy="{ax.py(y):.1f}" r="4" '
                'fill="white" stroke="#d62728"/>'
            )
        else:
            body.append(
                f'<circle cx="{ax.px(x):.1f}" cy="{ax.py(y):.1f}" r="4" '
                'fill="#1f77b4"/>'
            )
    return _write(path, _svg(ax.width, ax.height, body))


def plot_curve(xs, ys, path, title="Hypervolume over steps",
               xlabel="step", ylabel="hypervolume") -> Path:
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    ax = _Axes(xs, ys)
    body = ax.frame(xlabel, ylabel, title)
    pts = " ".join(f"{ax.px(x):.1f},{ax.py(y):.1f}" for x, y in zip(xs, ys))
    body.append(f'<polyline points="{pts}" fill="none" stroke="#1f77b4" '
                'stroke-width="1.5"/>')
    for x, y in zip(xs, ys):
        body.append(f'<circle cx="{ax.px(x):.1f}" cy="{ax.py(y):.1f}" r="3" '
                    'fill="#1f77b4"/>')
    return _write(path, _svg(ax.width, ax.height, body))


def plot_trajectory(scenario: Scenario, cells, path,
                    title="Trajectory") -> Path:
    """Map overlay: buildings shaded by height, devices, start/terminal,
    and the flown path."""
    city = scenario.city
    cell_px = max(6, min(24, 600 // max(city.length_cells, city.width_cells)))
    w = city.length_cells * cell_px + 40
    h = city.width_cells * cell_px + 60
    hmax = max(city.max_height, 1.0)

    def cx(x):
        return 20 + x * cell_px

    def cy(y):
        # y grows north; flip so north is up in the image
        return 30 + (city.width_cells - 1 - y) * cell_px

    body = [f'<text x="{w / 2}" y="18" text-anchor="middle" '
            f'font-size="13">{title}</text>']
    for x in range(city.length_cells):
        for y in range(city.width_cells):
            height = city.heights[x, y]
            if height > 0:
                shade = int(220 - 140 * height / hmax)
                color = f"rgb({shade},{shade},{shade})"
            else:
                color = "#f4f4f4"
            body.append(
                f'<rect x="{cx(x)}" y="{cy(y)}" width="{cell_px}" '
                f'height="{cell_px}" fill="{color}" stroke="#dddddd" '
                'stroke-width="0.5"/>'
            )
    for dev in scenario.devices:
        body.append(
            f'<circle cx="{cx(dev.position[0]) + cell_px / 2}" '
            f'cy="{cy(dev.position[1]) + cell_px / 2}" r="{cell_px / 3}" '
            'fill="#2ca02c"/>'
        )
    for cell, color, label in ((city.start, "#1f77b4", "S"),
                               (city.terminal, "#d62728", "T")):
        body.append(
            f'<rect x="{cx(cell[0])}" y="{cy(cell[1])}" width="{cell_px}" '
            f'height="{cell_px}" fill="none" stroke="{color}" stroke-width="2"/>'
        )
        body.append(
            f'<text x="{cx(cell[0]) + cell_px / 2}" '
            f'y="{cy(cell[1]) + cell_px * 0.7}" text-anchor="middle" '
            f'font-size="{cell_px * 0.6:.0f}" fill="{color}">{label}</text>'
        )
    pts = " ".join(
        f"{cx(x) + cell_px / 2:.1f},{cy(y) + cell_px / 2:.1f}" for x, y in cells
    )
    body.append(f'<polyline points="{pts}" fill="none" stroke="#ff7f0e" '
                'stroke-width="2" opacity="0.85"/>')
    return _write(path, _svg(w, h, body))


def plot_attention(matrix, labels, path, title="Attention") -> Path:
    """Heatmap of one attention matrix with labeled query/key axes."""
    matrix = np.asarray(matrix, dtype=float)
    n = matrix.shape[0]
    cell = 26
    left, top = 90, 90
    w = left + n * cell + 20
    h = top + n * cell + 20
    peak = max(matrix.max(), 1e-12)
    body = [f'<text x="{w / 2}" y="20" text-anchor="middle" '
            f'font-size="13">{title}</text>']
    for qi in range(n):
        for ki in range(n):
            v = matrix[qi, ki] / peak
            blue = int(255 - 205 * v)
            body.append(
                f'<rect x="{left + ki * cell}" y="{top + qi * cell}" '
                f'width="{cell}" height="{cell}" '
                f'fill="rgb({blue},{blue},255)" stroke="#eeeeee"/>'
            )
    for i, label in enumerate(labels):
        body.append(
            f'<text x="{left + i * cell + cell / 2}" y="{top - 6}" '
            f'font-size="9" text-anchor="start" '
            f'transform="rotate(-60 {left + i * cell + cell / 2} {top - 6})">'
            f"{label}</text>"
        )
        body.append(
            f'<text x="{left - 6}" y="{top + i * cell + cell * 0.65}" '
            f'font-size="9" text-anchor="end">{label}</text>'
        )
    return _write(path, _svg(w, h, body))
