# ───────────────────────────────────────────────────────────────────────────────
# app/plotting.py
"""Standalone SVG scatter of real vs. generated 2D samples."""
from __future__ import annotations

import os
from typing import List, Optional, Union

import numpy as np

from app.core import ContractViolation
from app.synth import Bounds, SampleSet

REAL_COLOR = "#2563eb"
FAKE_COLOR = "#dc2626"


def _svg_escape(text: str) -> str:
    return (
        text.replace("&", "&amp;")
        .replace("<", "&lt;")
        .replace(">", "&gt;")
        .replace('"', "&quot;")
        .replace("'", "&#39;")
    )


def _plot_bounds(sets: List[np.ndarray]) -> Bounds:
    pts = np.vstack([s for s in sets if s.size]) if any(s.size for s in sets) else np.zeros((1, 2))
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = np.maximum(hi - lo, 1e-6)
    lo, hi = lo - 0.05 * span, hi + 0.05 * span
    return (float(lo[0]), float(hi[0])), (float(lo[1]), float(hi[1]))


def render_scatter_svg(
    real: SampleSet,
    generated: SampleSet,
    title: Optional[str] = None,
    bounds: Optional[Bounds] = None,
    width: int = 640,
    height: int = 640,
    max_points: int = 4096,
) -> str:
    """Real samples as filled circles, generated samples as crosses."""
    if width < 200 or height < 200:
        raise ContractViolation(f"scatter size must be at least 200x200, got {width}x{height}")
    real_pts = real.points[:max_points]
    fake_pts = generated.points[:max_points]
    (x_min, x_max), (y_min, y_max) = bounds or _plot_bounds([real_pts, fake_pts])

    margin_left, margin_right, margin_top, margin_bottom = 60, 20, 30, 50
    plot_w = width - margin_left - margin_right
    plot_h = height - margin_top - margin_bottom

    def map_x(value: float) -> float:
        return margin_left + (value - x_min) / (x_max - x_min) * plot_w

    def map_y(value: float) -> float:
        return margin_top + (1.0 - (value - y_min) / (y_max - y_min)) * plot_h

    lines: List[str] = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
        f'<rect x="{margin_left}" y="{margin_top}" width="{plot_w}" height="{plot_h}" fill="#f8fafc" stroke="#cbd5e1"/>',
    ]

    lines.append(f'<g fill="{REAL_COLOR}" fill-opacity="0.5">')
    for x, y in real_pts:
        lines.append(f'<circle cx="{map_x(x):.2f}" cy="{map_y(y):.2f}" r="2"/>')
    lines.append("</g>")

    lines.append(f'<g stroke="{FAKE_COLOR}" stroke-width="1">')
    for x, y in fake_pts:
        cx, cy = map_x(x), map_y(y)
        lines.append(
            f'<path d="M{cx - 2.5:.2f},{cy - 2.5:.2f} L{cx + 2.5:.2f},{cy + 2.5:.2f} '
            f'M{cx - 2.5:.2f},{cy + 2.5:.2f} L{cx + 2.5:.2f},{cy - 2.5:.2f}"/>'
        )
    lines.append("</g>")

    lines.append('<g font-family="Menlo,Monaco,monospace" font-size="12" fill="#0f172a">')
    lines.append(f'<text x="{margin_left + plot_w / 2:.2f}" y="{height - 12}">x</text>')
    lines.append(f'<text x="16" y="{margin_top + plot_h / 2:.2f}">y</text>')
    for idx in range(5):
        fx = idx / 4
        lines.append(
            f'<text x="{margin_left + fx * plot_w - 12:.2f}" y="{margin_top + plot_h + 16}">'
            f"{x_min + fx * (x_max - x_min):.2f}</text>"
        )
        lines.append(
            f'<text x="8" y="{margin_top + (1 - fx) * plot_h + 4:.2f}">'
            f"{y_min + fx * (y_max - y_min):.2f}</text>"
        )
    if title:
        lines.append(f'<text x="{margin_left}" y="20">{_svg_escape(title)}</text>')
    legend_x = margin_left + plot_w - 120
    lines.append(f'<circle cx="{legend_x}" cy="{margin_top + 14}" r="4" fill="{REAL_COLOR}"/>')
    lines.append(f'<text x="{legend_x + 10}" y="{margin_top + 18}">real ({real.n})</text>')
    lines.append(
        f'<path d="M{legend_x - 4},{margin_top + 26} L{legend_x + 4},{margin_top + 34} '
        f'M{legend_x - 4},{margin_top + 34} L{legend_x + 4},{margin_top + 26}" stroke="{FAKE_COLOR}"/>'
    )
    lines.append(f'<text x="{legend_x + 10}" y="{margin_top + 34}">generated ({generated.n})</text>')
    lines.append("</g>")
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def write_scatter_svg(path: Union[str, os.PathLike], real: SampleSet, generated: SampleSet, **kwargs) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(render_scatter_svg(real, generated, **kwargs))
