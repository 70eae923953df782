"""Cohesiveness metric: shape regularity times packing density.

Regularity compares the equal-area circle radius of the group outline
against the mean contour-point distance from the centroid; it is 1.0 for a
circle and drops for elongated shapes. Density is the particle-covered
fraction of the outline area. Their product, as a percentage, is the
cohesion score used to pick herding targets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .contour import ContourSamples
from .geometry import mean_radial_distance, points_mean, polygon_area, _points_array

# Score below which the group counts as loosely packed; targets are then
# chosen to compact the group rather than to advance it.
ZETA_THRESHOLD = 50.0

_DEGENERATE_AREA = 1e-12


@dataclass(frozen=True)
class CohesionReport:
    """Cohesion breakdown for one snapshot of the group."""

    alpha: float  # particle-covered area, m^2
    beta: float  # outline area, m^2
    regularity: float
    density: float
    zeta: float  # percent, regularity * density * 100


def particle_area(count: int, particle_radius: float) -> float:
    """Total disc area of `count` non-overlapping particles."""
    if count < 1:
        raise ValueError("particle area needs at least one particle")
    return count * math.pi * particle_radius * particle_radius


def group_area(contour: ContourSamples) -> float:
    """Unsigned shoelace area of the group outline polyline."""
    area = abs(polygon_area(contour.points))
    if area < _DEGENERATE_AREA:
        raise ValueError("degenerate contour (area below 1e-12)")
    return area


def regularity(contour_points, beta: float) -> float:
    """sqrt(beta/pi) over the mean contour-point distance from the centroid.

    The numerator is the radius of the circle with the outline's area, so a
    circular outline scores exactly 1 regardless of size.
    """
    pts = _points_array(contour_points)
    if len(pts) < 3:
        raise ValueError("regularity needs at least 3 contour points")
    if beta <= 0:
        raise ValueError("outline area must be positive")
    spread = mean_radial_distance(pts, points_mean(pts))
    if spread <= 0:
        raise ValueError("contour points coincide with their centroid")
    return math.sqrt(beta / math.pi) / spread


def cohesiveness(alpha: float, beta: float, contour_points) -> CohesionReport:
    """Combine density alpha/beta and shape regularity into a percent score."""
    if alpha <= 0:
        raise ValueError("particle area must be positive")
    if beta <= 0:
        raise ValueError("outline area must be positive")
    reg = regularity(contour_points, beta)
    density = alpha / beta
    return CohesionReport(
        alpha=alpha,
        beta=beta,
        regularity=reg,
        density=density,
        zeta=reg * density * 100.0,
    )
