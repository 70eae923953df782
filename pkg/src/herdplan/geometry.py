"""Planar primitives shared by every other module.

All coordinates are in meters, world frame fixed to the tabletop.
Degeneracy tolerance is GEOM_EPS (1e-9 m).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

GEOM_EPS = 1e-9


@dataclass(frozen=True)
class Point2:
    """A point in the world frame, meters."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite point ({self.x}, {self.y})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)

    def distance_to(self, other: "Point2") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def __add__(self, other: "Point2") -> "Point2":
        return Point2(self.x + other.x, self.y + other.y)

    def __sub__(self, other: "Point2") -> "Point2":
        return Point2(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class Segment:
    """A wall or tool segment with distinct endpoints."""

    a: Point2
    b: Point2

    def __post_init__(self):
        if self.a.distance_to(self.b) <= GEOM_EPS:
            raise ValueError("segment endpoints coincide")

    def length(self) -> float:
        return self.a.distance_to(self.b)


@dataclass(frozen=True)
class ClosedPolyline:
    """An implicitly closed polyline (last vertex connects to the first).

    Orientation is carried by vertex order; counterclockwise order gives
    positive signed area.
    """

    vertices: tuple

    def __init__(self, vertices: Iterable[Point2]):
        verts = tuple(vertices)
        if len(verts) < 3:
            raise ValueError("closed polyline needs at least 3 vertices")
        for u, v in zip(verts, verts[1:]):
            if u.distance_to(v) <= GEOM_EPS:
                raise ValueError("consecutive vertices coincide")
        object.__setattr__(self, "vertices", verts)

    def as_array(self) -> np.ndarray:
        return np.array([[v.x, v.y] for v in self.vertices], dtype=float)


def _points_array(points) -> np.ndarray:
    """Accept a list of Point2, a list of (x, y) pairs, or an (N, 2) array."""
    if isinstance(points, np.ndarray):
        return np.asarray(points, dtype=float)
    if isinstance(points, ClosedPolyline):
        return points.as_array()
    if len(points) and isinstance(points[0], Point2):
        return np.array([[p.x, p.y] for p in points], dtype=float)
    return np.asarray(points, dtype=float)


def polygon_area(poly) -> float:
    """Signed shoelace area; positive iff the boundary runs counterclockwise.

    Accepts a ClosedPolyline or any vertex sequence. Degenerate inputs
    return 0.
    """
    pts = _points_array(poly)
    if len(pts) < 3:
        return 0.0
    x, y = pts[:, 0], pts[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    return 0.5 * float(np.sum(x * yn - xn * y))


def polygon_centroid(poly) -> Point2:
    """Arithmetic mean of the vertices (not the area centroid)."""
    pts = _points_array(poly)
    if len(pts) == 0:
        raise ValueError("cannot take centroid of empty vertex set")
    cx, cy = pts.mean(axis=0)
    return Point2(float(cx), float(cy))


def point_segment_distance(p: Point2, s: Segment) -> float:
    """Euclidean distance from p to the closest point of segment s."""
    return _point_segment_distance_xy(p.x, p.y, s.a.x, s.a.y, s.b.x, s.b.y)


def _point_segment_distance_xy(px, py, ax, ay, bx, by) -> float:
    vx, vy = bx - ax, by - ay
    wx, wy = px - ax, py - ay
    vv = vx * vx + vy * vy
    if vv <= GEOM_EPS * GEOM_EPS:
        return math.hypot(wx, wy)
    t = (wx * vx + wy * vy) / vv
    t = min(1.0, max(0.0, t))
    return math.hypot(px - (ax + t * vx), py - (ay + t * vy))


def mean_radial_distance(points, center: Point2) -> float:
    """Mean Euclidean distance of a nonempty point set from center."""
    pts = _points_array(points)
    if len(pts) == 0:
        raise ValueError("cannot take mean radial distance of empty point set")
    d = np.hypot(pts[:, 0] - center.x, pts[:, 1] - center.y)
    return float(d.mean())


def points_mean(points) -> Point2:
    """Vertex mean of an arbitrary nonempty point set."""
    return polygon_centroid(points)


def segments_min_distance(px: float, py: float, segments: Sequence[Segment]) -> float:
    """Distance from (px, py) to the nearest segment; +inf when none given."""
    if not segments:
        return math.inf
    return min(
        _point_segment_distance_xy(px, py, s.a.x, s.a.y, s.b.x, s.b.y)
        for s in segments
    )
