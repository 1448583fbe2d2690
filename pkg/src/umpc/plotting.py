"""Minimal deterministic SVG emitters for trajectories and forecast regions.

Hand-rolled SVG keeps the output free of library metadata so files diff
cleanly in CI.
"""

from __future__ import annotations

import math

import numpy as np

from .geometry import ForecastEllipse, RectangleRegion

GREEN = "#019377"
BLUE = "#005f8c"
PINK = "#e8a0c8"
ORANGE = "#e69202"
RED = "#b3000d"


def _fmt(v: float) -> str:
    return f"{v:.3f}"


class SvgCanvas:
    """Fixed-size canvas mapping world coordinates (m) to SVG pixels."""

    def __init__(self, xlim: tuple[float, float], ylim: tuple[float, float],
                 width: int = 640):
        self.x0, self.x1 = xlim
        self.y0, self.y1 = ylim
        span_x = max(self.x1 - self.x0, 1e-9)
        span_y = max(self.y1 - self.y0, 1e-9)
        self.scale = width / span_x
        self.width = width
        self.height = int(math.ceil(span_y * self.scale))
        self.parts: list[str] = []

    def to_px(self, x: float, y: float) -> tuple[float, float]:
        return ((x - self.x0) * self.scale, (self.y1 - y) * self.scale)

    def dot(self, x: float, y: float, radius_px: float, color: str, opacity: float = 1.0):
        cx, cy = self.to_px(x, y)
        self.parts.append(
            f'<circle cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="{_fmt(radius_px)}" '
            f'fill="{color}" fill-opacity="{_fmt(opacity)}"/>'
        )

    def polyline(self, points: np.ndarray, color: str, stroke_px: float = 1.5,
                 fill: str = "none", opacity: float = 1.0, closed: bool = False):
        px = [self.to_px(float(p[0]), float(p[1])) for p in points]
        coords = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in px)
        tag = "polygon" if closed else "polyline"
        self.parts.append(
            f'<{tag} points="{coords}" fill="{fill}" fill-opacity="{_fmt(opacity)}" '
            f'stroke="{color}" stroke-width="{_fmt(stroke_px)}"/>'
        )

    def text(self, x_px: float, y_px: float, content: str, size: int = 14):
        self.parts.append(
            f'<text x="{_fmt(x_px)}" y="{_fmt(y_px)}" font-size="{size}" '
            f'font-family="sans-serif">{content}</text>'
        )

    def render(self) -> str:
        body = "\n".join(self.parts)
        return (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" '
            f'height="{self.height}" viewBox="0 0 {self.width} {self.height}">\n'
            f'<rect width="100%" height="100%" fill="white"/>\n{body}\n</svg>\n'
        )


def ellipse_polygon(center, rot: np.ndarray, semi_axes, n: int = 96) -> np.ndarray:
    t = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
    local = np.column_stack([semi_axes[0] * np.cos(t), semi_axes[1] * np.sin(t)])
    return np.asarray(center) + local @ rot.T


def draw_forecast_ellipse(canvas: SvgCanvas, ellipse: ForecastEllipse,
                          color: str = PINK, opacity: float = 0.25,
                          pre_enlargement: bool = True):
    """Pink forecast region; by default the confidence ellipse before enlargement."""
    s = ellipse.chance.s
    if pre_enlargement:
        axes = (s * math.sqrt(max(ellipse.raw.lambda1, 0.0)),
                s * math.sqrt(max(ellipse.raw.lambda2, 0.0)))
        axes = (max(axes[0], 0.02), max(axes[1], 0.02))
    else:
        axes = ellipse.semi_axes
    poly = ellipse_polygon(ellipse.center, ellipse.rot, axes)
    canvas.polyline(poly, color, stroke_px=0.8, fill=color, opacity=opacity, closed=True)


def draw_rectangle(canvas: SvgCanvas, rect: RectangleRegion, color: str = BLUE):
    canvas.polyline(rect.corners(), color, stroke_px=1.5, closed=True)
