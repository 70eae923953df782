"""Group area, shape regularity, density, and the cohesiveness score."""

import math

import numpy as np
import pytest

from herdplan.cohesion import (
    CohesionReport,
    cohesiveness,
    group_area,
    particle_area,
    regularity,
)
from herdplan.contour import ContourSamples, fit_fourier, reconstruct
from herdplan.geometry import polygon_area


def eight_point_circle(radius: float = 1.0) -> np.ndarray:
    tk = 2 * np.pi * np.arange(8) / 8
    return np.stack([radius * np.cos(tk), radius * np.sin(tk)], axis=1)


def eight_point_box(w: float, h: float) -> np.ndarray:
    """Corners plus edge midpoints of an axis-aligned w-by-h box."""
    x, y = w / 2, h / 2
    return np.array(
        [
            (x, 0.0),
            (x, y),
            (0.0, y),
            (-x, y),
            (-x, 0.0),
            (-x, -y),
            (0.0, -y),
            (x, -y),
        ]
    )


def dense_circle(radius: float, m: int = 256) -> ContourSamples:
    tk = 2 * np.pi * np.arange(m) / m
    return ContourSamples(
        np.stack([radius * np.cos(tk), radius * np.sin(tk)], axis=1)
    )


class TestParticleArea:
    def test_unit_radius(self):
        assert particle_area(1, 1.0) == pytest.approx(math.pi, rel=1e-12)

    def test_scales_with_count_and_radius(self):
        assert particle_area(100, 0.01) == pytest.approx(math.pi * 1e-2, rel=1e-12)

    def test_zero_count_rejected(self):
        with pytest.raises(ValueError):
            particle_area(0, 0.01)


class TestGroupArea:
    def test_circle_matches_disc_area(self):
        rec = reconstruct(fit_fourier(dense_circle(2.0), 5), 256)
        assert group_area(rec) == pytest.approx(4 * math.pi, rel=0.005)

    def test_quadratic_under_scaling(self):
        rec = reconstruct(fit_fourier(dense_circle(1.0), 5), 256)
        scaled = ContourSamples(3.0 * rec.points)
        assert group_area(scaled) == pytest.approx(9 * group_area(rec), rel=1e-9)

    def test_orientation_insensitive(self):
        rec = reconstruct(fit_fourier(dense_circle(1.0), 5), 256)
        flipped = ContourSamples(rec.points[::-1])
        assert group_area(flipped) == pytest.approx(group_area(rec), rel=1e-12)

    def test_elongated_box_through_low_harmonics(self):
        # An 8x2 rectangle pushed through five harmonics keeps most of its
        # area 16 but rounds the corners.
        w, h = 8.0, 2.0
        per = 2 * (w + h)
        pts = []
        for t in np.linspace(0, per, 256, endpoint=False):
            s = t % per
            if s < w:
                pts.append((-w / 2 + s, -h / 2))
            elif s < w + h:
                pts.append((w / 2, -h / 2 + (s - w)))
            elif s < 2 * w + h:
                pts.append((w / 2 - (s - w - h), h / 2))
            else:
                pts.append((-w / 2, h / 2 - (s - 2 * w - h)))
        rec = reconstruct(fit_fourier(ContourSamples(np.array(pts)), 5), 256)
        assert 14.0 < group_area(rec) < 17.0

    def test_degenerate_contour_rejected(self):
        with pytest.raises(ValueError):
            group_area(ContourSamples(np.zeros((16, 2))))


class TestRegularity:
    def test_circle_is_perfectly_regular(self):
        assert regularity(eight_point_circle(1.0), math.pi) == pytest.approx(
            1.0, abs=1e-12
        )

    def test_scale_invariant(self):
        pts = eight_point_box(1.5, 1.0)
        assert regularity(7.3 * pts, 7.3**2 * 1.5) == pytest.approx(
            regularity(pts, 1.5), rel=1e-12
        )

    def test_square_eight_point_value(self):
        assert regularity(eight_point_box(1.0, 1.0), 1.0) == pytest.approx(
            0.9348, abs=5e-4
        )

    def test_rectangle_eight_point_value(self):
        assert regularity(eight_point_box(2.0, 0.5), 1.0) == pytest.approx(
            0.6815, abs=5e-4
        )

    def test_more_elongation_less_regular(self):
        vals = [
            regularity(eight_point_box(a, 1.0 / a), 1.0) for a in (1.0, 1.5, 2.0, 3.0)
        ]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_too_few_points_rejected(self):
        with pytest.raises(ValueError):
            regularity(np.array([[0.0, 0.0], [1.0, 0.0]]), 1.0)

    def test_nonpositive_area_rejected(self):
        with pytest.raises(ValueError):
            regularity(eight_point_circle(1.0), 0.0)

    def test_coincident_points_rejected(self):
        with pytest.raises(ValueError):
            regularity(np.zeros((8, 2)), 1.0)


class TestCohesiveness:
    def test_half_dense_circle_scores_fifty(self):
        report = cohesiveness(0.5 * math.pi, math.pi, eight_point_circle(1.0))
        assert report.zeta == pytest.approx(50.0, abs=1e-9)
        assert report.regularity == pytest.approx(1.0, abs=1e-12)
        assert report.density == pytest.approx(0.5, rel=1e-12)

    def test_score_is_shape_times_density(self, rng):
        for _ in range(20):
            radii = rng.uniform(0.5, 2.0, size=32)
            tk = 2 * np.pi * np.arange(32) / 32
            pts = np.stack([radii * np.cos(tk), radii * np.sin(tk)], axis=1)
            beta = abs(polygon_area(pts))
            alpha = float(rng.uniform(0.05, 1.0)) * beta
            report = cohesiveness(alpha, beta, pts)
            assert report.zeta == pytest.approx(
                report.regularity * report.density * 100.0, rel=1e-9
            )
            assert report.density == pytest.approx(alpha / beta, rel=1e-12)

    def test_report_fields(self):
        report = cohesiveness(0.3, 1.0, eight_point_circle(1.0))
        assert isinstance(report, CohesionReport)
        assert report.alpha == 0.3
        assert report.beta == 1.0
        assert 0.0 < report.density <= 1.0
        assert 0.0 < report.regularity

    def test_nonpositive_particle_area_rejected(self):
        with pytest.raises(ValueError):
            cohesiveness(0.0, 1.0, eight_point_circle(1.0))

    def test_nonpositive_outline_area_rejected(self):
        with pytest.raises(ValueError):
            cohesiveness(0.5, -1.0, eight_point_circle(1.0))

    def test_scale_invariance_of_score(self):
        pts = eight_point_box(1.5, 1.0)
        base = cohesiveness(0.6, 1.5, pts)
        scaled = cohesiveness(0.6 * 25.0, 1.5 * 25.0, 5.0 * pts)
        assert scaled.zeta == pytest.approx(base.zeta, rel=1e-12)


class TestBenchmarkShapes:
    """The shape table the score was calibrated against (density 1/2)."""

    def test_square_combination(self):
        report = cohesiveness(0.5, 1.0, eight_point_box(1.0, 1.0))
        assert report.regularity == pytest.approx(0.934, abs=0.002)
        assert report.zeta == pytest.approx(46.7, abs=0.1)

    def test_rectangle_combination(self):
        report = cohesiveness(0.5, 1.0, eight_point_box(2.0, 0.5))
        assert report.regularity == pytest.approx(0.682, abs=0.002)
        assert report.zeta == pytest.approx(34.1, abs=0.1)
