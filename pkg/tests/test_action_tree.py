"""Target selection, centroid levels, plan graph, and waypoint extraction."""

import math

import numpy as np
import pytest

from herdplan.action_tree import (
    DEFAULT_TARGET_COUNT,
    CentroidLevels,
    PlanGraph,
    TargetSet,
    build_graph,
    build_levels,
    plan_trajectories,
    select_targets,
    shortest_paths,
)
from herdplan.geometry import Point2

GATE = Point2(0.0, 0.0)


def fan_targets():
    """Five targets on the line y=2 whose levels have closed-form values."""
    return TargetSet(tuple(Point2(x, 2.0) for x in (-2.0, -1.0, 0.0, 1.0, 2.0)))


def close_to(p: Point2, xy, tol=1e-12) -> bool:
    return abs(p.x - xy[0]) <= tol and abs(p.y - xy[1]) <= tol


class TestSelectTargets:
    def test_all_kept_when_equidistant_and_close(self):
        centroid = Point2(0.6, 0.5)
        gate = Point2(0.6, 0.15)
        tk = 2 * np.pi * (np.arange(5) + 0.5) / 5
        pts = [Point2(0.6 + 0.05 * math.cos(t), 0.5 + 0.05 * math.sin(t)) for t in tk]
        chosen = select_targets(pts, centroid, gate, 30.0, 55.0)
        assert len(chosen) == 5
        assert {(p.x, p.y) for p in chosen.points} == {(p.x, p.y) for p in pts}

    def test_high_cohesion_picks_farthest_from_gate(self):
        gate = Point2(0.6, 0.15)
        pts = [Point2(0.6, 0.30 + 0.02 * i) for i in range(10)]
        centroid = Point2(0.6, 0.39)
        chosen = select_targets(pts, centroid, gate, 80.0, 55.0)
        assert len(chosen) == 5
        assert sorted(round(p.y, 6) for p in chosen.points) == [
            0.40,
            0.42,
            0.44,
            0.46,
            0.48,
        ]

    def test_low_cohesion_ranks_from_centroid(self):
        gate = Point2(0.0, -1.0)
        centroid = Point2(0.0, 0.0)
        # Two obvious outliers plus a tight core; loose group -> the
        # outliers (farthest from the centroid) must both be selected.
        pts = [
            Point2(0.0, 0.09),
            Point2(0.01, 0.0),
            Point2(-0.01, 0.0),
            Point2(0.0, -0.09),
            Point2(0.0, 0.01),
        ]
        chosen = select_targets(
            pts, centroid, gate, 30.0, 55.0, k=2, tool_segment_length=0.25
        )
        ys = sorted(p.y for p in chosen.points)
        assert ys == [-0.09, 0.09]

    def test_wide_fan_truncated_by_tool_spacing(self):
        centroid = Point2(0.0, 0.0)
        gate = Point2(0.0, -1.0)
        tk = 2 * np.pi * (np.arange(5) + 0.5) / 5
        pts = [Point2(0.3 * math.cos(t), 0.3 * math.sin(t)) for t in tk]
        chosen = select_targets(pts, centroid, gate, 30.0, 55.0)
        assert len(chosen) == 2  # adjacent chords are 0.35 > 0.12 apart

    def test_returns_points_in_angular_order(self):
        centroid = Point2(0.0, 1.0)
        gate = Point2(0.0, 0.0)
        a, b, c = Point2(-0.05, 1.0), Point2(0.0, 1.05), Point2(0.05, 1.0)
        chosen = select_targets([a, b, c], centroid, gate, 80.0, 55.0, k=3)
        assert [p.x for p in chosen.points] == [0.05, 0.0, -0.05]

    def test_fewer_than_two_particles_rejected(self):
        with pytest.raises(ValueError):
            select_targets([Point2(0, 0)], Point2(0, 0), GATE, 50.0, 55.0)

    def test_target_set_needs_two_points(self):
        with pytest.raises(ValueError):
            TargetSet((Point2(0, 0),))


class TestBuildLevels:
    def test_hand_computed_fan_levels(self):
        levels = build_levels(fan_targets(), GATE)
        assert tuple(len(level) for level in levels.levels) == (4, 3, 2)
        expected = [
            [(-1.0, 4 / 3), (-1 / 3, 4 / 3), (1 / 3, 4 / 3), (1.0, 4 / 3)],
            [(-4 / 9, 8 / 9), (0.0, 8 / 9), (4 / 9, 8 / 9)],
            [(-4 / 27, 16 / 27), (4 / 27, 16 / 27)],
        ]
        for level, row in zip(levels.levels, expected):
            for p, xy in zip(level, row):
                assert close_to(p, xy)

    def test_two_targets_skip_levels(self):
        targets = TargetSet((Point2(-1, 1), Point2(1, 1)))
        levels = build_levels(targets, GATE)
        assert levels.levels == ()
        assert levels.gate == GATE

    def test_targets_at_gate_are_a_fixed_point(self):
        targets = TargetSet(tuple(Point2(0.0, 0.0) for _ in range(3)))
        levels = build_levels(targets, GATE)
        assert all(close_to(p, (0.0, 0.0)) for level in levels.levels for p in level)

    def test_level_sizes_must_step_down_by_one(self):
        with pytest.raises(ValueError):
            CentroidLevels(((Point2(0, 1), Point2(1, 1)), (Point2(0, 0.5),)), GATE)

    def test_final_level_must_have_two_points(self):
        with pytest.raises(ValueError):
            CentroidLevels(((Point2(0, 1), Point2(1, 1), Point2(2, 1)),), GATE)

    def test_each_level_contracts_toward_gate(self, rng):
        for _ in range(100):
            n = int(rng.integers(3, 8))
            pts = tuple(
                Point2(float(x), float(y))
                for x, y in rng.uniform(-3.0, 3.0, size=(n, 2))
            )
            gate = Point2(*(float(v) for v in rng.uniform(-1.0, 1.0, size=2)))
            levels = build_levels(TargetSet(pts), gate)
            prev_max = max(p.distance_to(gate) for p in pts)
            for level in levels.levels:
                cur_max = max(p.distance_to(gate) for p in level)
                assert cur_max <= (2.0 / 3.0) * prev_max + 1e-12
                prev_max = cur_max

    def test_levels_stay_inside_hull_of_targets_and_gate(self, rng):
        for _ in range(25):
            n = int(rng.integers(3, 7))
            pts = tuple(
                Point2(float(x), float(y))
                for x, y in rng.uniform(-3.0, 3.0, size=(n, 2))
            )
            gate = Point2(*(float(v) for v in rng.uniform(-1.0, 1.0, size=2)))
            hull = [(p.x, p.y) for p in pts] + [(gate.x, gate.y)]
            levels = build_levels(TargetSet(pts), gate)
            for _ in range(20):
                ux, uy = rng.normal(size=2)
                support = max(ux * hx + uy * hy for hx, hy in hull)
                for level in levels.levels:
                    for p in level:
                        assert ux * p.x + uy * p.y <= support + 1e-9


class TestBuildGraph:
    def test_node_count_five_targets(self):
        targets = fan_targets()
        graph = build_graph(build_levels(targets, GATE), targets, GATE)
        assert len(graph.positions) == 15  # 1 gate + 5 + 4 + 3 + 2
        assert graph.gate_index == 0
        assert graph.target_indices == (1, 2, 3, 4, 5)

    def test_node_count_three_targets(self):
        targets = TargetSet((Point2(-1, 2), Point2(0, 2), Point2(1, 2)))
        graph = build_graph(build_levels(targets, GATE), targets, GATE)
        assert len(graph.positions) == 6  # 1 gate + 3 + 2

    def test_two_targets_connect_straight_to_gate(self):
        targets = TargetSet((Point2(-1, 1), Point2(1, 1)))
        graph = build_graph(build_levels(targets, GATE), targets, GATE)
        assert len(graph.positions) == 3
        for t in graph.target_indices:
            assert [v for v, _ in graph.adjacency[t]] == [0]

    def test_edge_weights_are_euclidean(self):
        targets = fan_targets()
        graph = build_graph(build_levels(targets, GATE), targets, GATE)
        for u, edges in graph.adjacency.items():
            for v, w in edges:
                assert w == pytest.approx(
                    graph.positions[u].distance_to(graph.positions[v]), rel=1e-12
                )

    def test_interior_targets_feed_two_centroids(self):
        targets = fan_targets()
        graph = build_graph(build_levels(targets, GATE), targets, GATE)
        out_degrees = [len(graph.adjacency[t]) for t in graph.target_indices]
        assert out_degrees == [1, 2, 2, 2, 1]
        assert graph.adjacency[0] == []  # the gate is a sink


def brute_force_shortest(graph: PlanGraph, start: int):
    """Enumerate every path start -> gate in the (acyclic) plan graph."""
    best = [math.inf]

    def walk(u, acc):
        if u == graph.gate_index:
            best[0] = min(best[0], acc)
            return
        for v, w in graph.adjacency[u]:
            walk(v, acc + w)

    walk(start, 0.0)
    return best[0]


class TestShortestPaths:
    def test_hand_computed_leftmost_path(self):
        targets = fan_targets()
        paths = shortest_paths(build_graph(build_levels(targets, GATE), targets, GATE))
        left = paths.trajectories[0]
        expected = [
            (-2.0, 2.0),
            (-1.0, 4 / 3),
            (-4 / 9, 8 / 9),
            (-4 / 27, 16 / 27),
            (0.0, 0.0),
        ]
        assert len(left) == len(expected)
        for p, xy in zip(left, expected):
            assert close_to(p, xy)

    def test_one_path_per_target_spanning_every_level(self):
        targets = fan_targets()
        levels = build_levels(targets, GATE)
        paths = shortest_paths(build_graph(levels, targets, GATE))
        assert len(paths) == 5
        for traj, start in zip(paths.trajectories, targets.points):
            assert len(traj) == len(levels.levels) + 2
            assert traj[0] == start
            assert traj[-1] == GATE
        assert paths.start_points() == targets.points

    def test_two_target_paths_are_direct(self):
        targets = TargetSet((Point2(-1, 1), Point2(1, 1)))
        paths = shortest_paths(build_graph(build_levels(targets, GATE), targets, GATE))
        assert paths.trajectories == ((Point2(-1, 1), GATE), (Point2(1, 1), GATE))

    def test_matches_brute_force_on_random_instances(self, rng):
        for _ in range(30):
            n = int(rng.integers(3, 6))
            pts = tuple(
                Point2(float(x), float(y))
                for x, y in rng.uniform(-3.0, 3.0, size=(n, 2))
            )
            gate = Point2(*(float(v) for v in rng.uniform(-1.0, 1.0, size=2)))
            targets = TargetSet(pts)
            graph = build_graph(build_levels(targets, gate), targets, gate)
            assert len(graph.positions) <= 20
            paths = shortest_paths(graph)
            for start, traj in zip(graph.target_indices, paths.trajectories):
                length = sum(a.distance_to(b) for a, b in zip(traj, traj[1:]))
                assert length == pytest.approx(
                    brute_force_shortest(graph, start), abs=1e-12
                )

    def test_unreachable_gate_raises(self):
        graph = PlanGraph(
            (Point2(0, 0), Point2(1, 1)), {0: [], 1: []}, 0, (1,)
        )
        with pytest.raises(RuntimeError):
            shortest_paths(graph)


class TestPlanTrajectories:
    def test_full_pipeline_on_column(self):
        gate = Point2(0.6, 0.15)
        pts = [Point2(0.6, 0.30 + 0.02 * i) for i in range(10)]
        centroid = Point2(0.6, 0.39)
        paths = plan_trajectories(pts, centroid, gate, 80.0, 55.0)
        assert len(paths) == DEFAULT_TARGET_COUNT
        starts = paths.start_points()
        assert sorted(round(p.y, 6) for p in starts) == [0.40, 0.42, 0.44, 0.46, 0.48]
        for traj in paths.trajectories:
            assert traj[-1] == gate

    def test_default_target_count(self):
        assert DEFAULT_TARGET_COUNT == 5
