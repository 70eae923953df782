"""Candidate herding paths from outlying particles to the gate.

Targets are the farthest particles (from the centroid when the group is
loose, from the gate when it is compact). Each consecutive target pair and
the gate span a triangle; triangle centroids form level 0, and the same
construction contracts level by level toward the gate until two points
remain. The gate, targets, and all centroids become a weighted graph and
Dijkstra extracts one waypoint path per target.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Optional

from .geometry import Point2

DEFAULT_TARGET_COUNT = 5


@dataclass(frozen=True)
class TargetSet:
    """Selected intervention particles, ordered by angle around the centroid."""

    points: tuple

    def __post_init__(self):
        if len(self.points) < 2:
            raise ValueError("target set needs at least 2 points")

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class CentroidLevels:
    """Triangle-centroid levels; level i+1 has one point fewer than level i."""

    levels: tuple
    gate: Point2

    def __post_init__(self):
        for prev, cur in zip(self.levels, self.levels[1:]):
            if len(cur) != len(prev) - 1:
                raise ValueError("level sizes must decrease by exactly 1")
        if self.levels and len(self.levels[-1]) != 2:
            raise ValueError("final level must have exactly 2 points")


@dataclass(frozen=True)
class PlanGraph:
    """Directed weighted graph over gate, targets, and centroids.

    Node 0 is the gate, nodes 1..m are the targets in angular order, and
    centroid nodes follow level by level. Edge weights are Euclidean.
    """

    positions: tuple
    adjacency: dict
    gate_index: int
    target_indices: tuple


@dataclass(frozen=True)
class TrajectorySet:
    """One waypoint path per target, each running target -> ... -> gate."""

    trajectories: tuple

    def __post_init__(self):
        if not self.trajectories:
            raise ValueError("trajectory set cannot be empty")

    def __len__(self) -> int:
        return len(self.trajectories)

    def start_points(self) -> tuple:
        return tuple(t[0] for t in self.trajectories)


def _angular_order(points, centroid: Point2, gate: Point2):
    """Sort indices by angle about the centroid, measured from the
    gate-to-centroid axis so the fan reads left to right from the gate."""
    ax, ay = centroid.x - gate.x, centroid.y - gate.y
    norm = math.hypot(ax, ay)
    if norm < 1e-12:
        ax, ay = 1.0, 0.0
    else:
        ax, ay = ax / norm, ay / norm
    angles = []
    for idx, p in enumerate(points):
        dx, dy = p.x - centroid.x, p.y - centroid.y
        # Angle of (dx, dy) in the frame whose +x axis is (ax, ay).
        angles.append((math.atan2(dy * ax - dx * ay, dx * ax + dy * ay), idx))
    return [idx for _, idx in sorted(angles)]


def _spacing_ok(points, limit: float) -> bool:
    return all(
        a.distance_to(b) <= limit for a, b in zip(points, points[1:])
    )


def select_targets(
    particles,
    centroid: Point2,
    gate: Point2,
    zeta: float,
    zeta_threshold: float,
    k: int = DEFAULT_TARGET_COUNT,
    tool_segment_length: float = 0.12,
) -> TargetSet:
    """Pick up to k intervention particles.

    Low cohesion ranks by distance from the centroid, high cohesion by
    distance from the gate (both descending). Candidates are added greedily
    in rank order, skipping any whose inclusion would leave two angularly
    consecutive targets farther apart than the tool segment; at least two
    targets are always returned.
    """
    pts = [p if isinstance(p, Point2) else Point2(p[0], p[1]) for p in particles]
    if len(pts) < 2:
        raise ValueError("target selection needs at least 2 particles")
    anchor = centroid if zeta < zeta_threshold else gate
    ranked = sorted(
        range(len(pts)), key=lambda i: (-pts[i].distance_to(anchor), i)
    )

    chosen: list[int] = []
    for idx in ranked:
        if len(chosen) >= k:
            break
        trial = [pts[i] for i in chosen] + [pts[idx]]
        ordered = [trial[j] for j in _angular_order(trial, centroid, gate)]
        if len(trial) == 1 or _spacing_ok(ordered, tool_segment_length):
            chosen.append(idx)
    if len(chosen) < 2:
        # Spacing left us a single target; fall back to the best-ranked pair.
        for idx in ranked:
            if idx not in chosen:
                chosen.append(idx)
                break
    order = _angular_order([pts[i] for i in chosen], centroid, gate)
    return TargetSet(tuple(pts[chosen[i]] for i in order))


def build_levels(targets: TargetSet, gate: Point2) -> CentroidLevels:
    """Iterated triangle-centroid levels from consecutive target pairs.

    Level 0 holds (P_j + P_{j+1} + gate)/3 for each consecutive pair; each
    further level repeats the construction on the previous level until a
    level of two points is produced. With exactly two targets there are no
    levels and paths run target -> gate directly.
    """
    pts = list(targets.points)
    if len(pts) == 2:
        return CentroidLevels((), gate)

    def centroids(row):
        return tuple(
            Point2((a.x + b.x + gate.x) / 3.0, (a.y + b.y + gate.y) / 3.0)
            for a, b in zip(row, row[1:])
        )

    levels = [centroids(pts)]
    while len(levels[-1]) > 2:
        levels.append(centroids(levels[-1]))
    return CentroidLevels(tuple(levels), gate)


def build_graph(levels: CentroidLevels, targets: TargetSet, gate: Point2) -> PlanGraph:
    """Assemble the plan graph rooted at the gate.

    Directed edges follow the generative structure: each target feeds the
    level-0 centroids it spawned, each centroid feeds the level-(i+1)
    centroids built from it, and the final level (or the targets themselves
    in the two-target case) feeds the gate.
    """
    positions = [gate] + list(targets.points)
    target_idx = list(range(1, len(targets.points) + 1))
    level_idx = []
    for level in levels.levels:
        start = len(positions)
        positions.extend(level)
        level_idx.append(list(range(start, start + len(level))))

    adjacency: dict = {i: [] for i in range(len(positions))}

    def connect(u: int, v: int):
        w = positions[u].distance_to(positions[v])
        adjacency[u].append((v, w))

    if not level_idx:
        for t in target_idx:
            connect(t, 0)
    else:
        first = level_idx[0]
        for j, c in enumerate(first):
            connect(target_idx[j], c)
            connect(target_idx[j + 1], c)
        for prev, cur in zip(level_idx, level_idx[1:]):
            for j, c in enumerate(cur):
                connect(prev[j], c)
                connect(prev[j + 1], c)
        for c in level_idx[-1]:
            connect(c, 0)
    return PlanGraph(tuple(positions), adjacency, 0, tuple(target_idx))


def shortest_paths(
    graph: PlanGraph, targets: Optional[TargetSet] = None, gate: Optional[Point2] = None
) -> TrajectorySet:
    """Minimum-length waypoint path from every target node to the gate.

    Runs Dijkstra per target with (distance, node index) heap entries so
    equal-distance ties settle on the smallest node index.
    """
    trajectories = []
    for start in graph.target_indices:
        dist = {start: 0.0}
        prev: dict = {}
        settled = set()
        heap = [(0.0, start)]
        while heap:
            d, u = heapq.heappop(heap)
            if u in settled:
                continue
            settled.add(u)
            if u == graph.gate_index:
                break
            for v, w in graph.adjacency[u]:
                nd = d + w
                if nd < dist.get(v, math.inf):
                    dist[v] = nd
                    prev[v] = u
                    heapq.heappush(heap, (nd, v))
        if graph.gate_index not in settled:
            raise RuntimeError("gate unreachable from target; graph construction bug")
        path = [graph.gate_index]
        while path[-1] != start:
            path.append(prev[path[-1]])
        path.reverse()
        trajectories.append(tuple(graph.positions[i] for i in path))
    return TrajectorySet(tuple(trajectories))


def plan_trajectories(
    particles,
    centroid: Point2,
    gate: Point2,
    zeta: float,
    zeta_threshold: float,
    k: int = DEFAULT_TARGET_COUNT,
    tool_segment_length: float = 0.12,
) -> TrajectorySet:
    """Full pipeline: select targets, build levels and graph, extract paths."""
    targets = select_targets(
        particles, centroid, gate, zeta, zeta_threshold, k, tool_segment_length
    )
    levels = build_levels(targets, gate)
    graph = build_graph(levels, targets, gate)
    return shortest_paths(graph, targets, gate)
