"""SVG snapshots of the tabletop.

Colour code: group contour blue, planned waypoints black, swept tool
path yellow, gate and walls brown, particles grey.  Output is plain
deterministic text (fixed float formatting, no timestamps), so frames
for identical inputs compare byte-for-byte.
"""

from __future__ import annotations

from typing import Iterable, Optional, Sequence

import numpy as np

from .sim import WorldConfig, WorldState, tool_segment_array

_SIZE = 640  # pixel width of the arena drawing area
_MARGIN = 20.0

_STYLE = {
    "wall": 'stroke="#8b5a2b" stroke-width="4" stroke-linecap="round"',
    "gate": 'stroke="#8b5a2b" stroke-width="2" stroke-dasharray="6 4"',
    "container": 'fill="none" stroke="#c8ab8a" stroke-width="1"',
    "arena": 'fill="#ffffff" stroke="#bbbbbb" stroke-width="1"',
    "particle": 'fill="#9a9a9a" stroke="none"',
    "tool": 'stroke="#333333" stroke-width="5" stroke-linecap="round"',
    "contour": 'fill="none" stroke="#1f5fd0" stroke-width="2"',
    "sweep": 'fill="none" stroke="#e8c520" stroke-width="2"',
    "waypoint_line": 'fill="none" stroke="#000000" stroke-width="1" stroke-dasharray="3 3"',
    "waypoint": 'fill="#000000" stroke="none"',
}


def _fmt(v: float) -> str:
    return f"{v:.2f}"


class _Canvas:
    """World-to-pixel transform plus an element buffer."""

    def __init__(self, config: WorldConfig):
        arena = config.arena
        self.scale = _SIZE / (arena.xmax - arena.xmin)
        self.x0 = arena.xmin
        self.y1 = arena.ymax
        self.width = _SIZE + 2 * _MARGIN
        self.height = self.scale * (arena.ymax - arena.ymin) + 2 * _MARGIN
        self.parts: list = []

    def px(self, x: float, y: float):
        # SVG y grows downward; flip about the arena top edge.
        return (
            _MARGIN + (x - self.x0) * self.scale,
            _MARGIN + (self.y1 - y) * self.scale,
        )

    def line(self, a, b, style: str):
        ax, ay = self.px(*a)
        bx, by = self.px(*b)
        self.parts.append(
            f'<line x1="{_fmt(ax)}" y1="{_fmt(ay)}" x2="{_fmt(bx)}" y2="{_fmt(by)}" {style}/>'
        )

    def circle(self, center, radius: float, style: str):
        cx, cy = self.px(*center)
        self.parts.append(
            f'<circle cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="{_fmt(radius * self.scale)}" {style}/>'
        )

    def rect(self, xmin, ymin, xmax, ymax, style: str):
        x, y = self.px(xmin, ymax)
        w = (xmax - xmin) * self.scale
        h = (ymax - ymin) * self.scale
        self.parts.append(
            f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(w)}" height="{_fmt(h)}" {style}/>'
        )

    def polyline(self, points: Iterable, style: str, closed: bool = False):
        coords = [self.px(float(p[0]), float(p[1])) for p in points]
        if len(coords) < 2:
            return
        body = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in coords)
        tag = "polygon" if closed else "polyline"
        self.parts.append(f'<{tag} points="{body}" {style}/>')

    def text(self, x_px: float, y_px: float, content: str):
        self.parts.append(
            f'<text x="{_fmt(x_px)}" y="{_fmt(y_px)}" font-family="monospace" '
            f'font-size="12" fill="#555555">{content}</text>'
        )

    def render(self) -> str:
        head = (
            '<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(self.width)}" '
            f'height="{_fmt(self.height)}" viewBox="0 0 {_fmt(self.width)} {_fmt(self.height)}">'
        )
        return head + "\n" + "\n".join(self.parts) + "\n</svg>\n"


def render_frame(
    state: WorldState,
    config: WorldConfig,
    waypoints: Optional[Sequence] = None,
    sweep: Optional[np.ndarray] = None,
    contour: Optional[np.ndarray] = None,
    caption: str = "",
) -> str:
    """One SVG snapshot; every argument beyond state/config is optional."""
    canvas = _Canvas(config)
    arena = config.arena
    canvas.rect(arena.xmin, arena.ymin, arena.xmax, arena.ymax, _STYLE["arena"])
    if config.container is not None:
        c = config.container
        canvas.rect(c.xmin, c.ymin, c.xmax, c.ymax, _STYLE["container"])
    for wall in config.walls:
        canvas.line((wall.a.x, wall.a.y), (wall.b.x, wall.b.y), _STYLE["wall"])
    half = config.gate_width / 2.0
    canvas.line(
        (config.gate.x - half, config.gate.y),
        (config.gate.x + half, config.gate.y),
        _STYLE["gate"],
    )

    if sweep is not None and len(sweep) >= 2:
        canvas.polyline(np.asarray(sweep, dtype=float)[:, :2], _STYLE["sweep"])

    if contour is not None and len(contour) >= 3:
        canvas.polyline(contour, _STYLE["contour"], closed=True)

    for k in range(len(state.positions)):
        canvas.circle(state.positions[k], config.particle_radius, _STYLE["particle"])

    if waypoints:
        pts = [(float(p.x), float(p.y)) for p in waypoints]
        canvas.polyline(pts, _STYLE["waypoint_line"])
        for p in pts:
            canvas.circle(p, 0.004, _STYLE["waypoint"])

    segs = tool_segment_array(
        state.tool_pose, config.crossbar_length, config.stem_length
    )
    for ax, ay, bx, by in segs:
        canvas.line((ax, ay), (bx, by), _STYLE["tool"])

    if caption:
        canvas.text(_MARGIN, canvas.height - 6.0, caption)
    return canvas.render()
