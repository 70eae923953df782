"""Deterministic 2D quasistatic tabletop world.

Disc particles live on a table bounded by the arena rectangle; an interior
wall with a gate opening separates the table from the container. A T-shaped
tool (crossbar perpendicular to a trailing stem, tooltip at the crossbar
midpoint) is swept along refined trajectories and pushes particles by
position projection: there are no velocities or friction, only overlap
resolution, which keeps every run bit-for-bit reproducible.

Per tool substep (capped at half a particle radius of relative motion):
tool-segment projection, K particle-pair relaxation passes, wall projection
and arena clamping, then gate-crossing delivery checks. A particle whose
tool overlap survives the recovery passes is reported as squeezed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from numba import njit
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components as _sparse_components

from . import mpc as _mpc
from .cohesion import CohesionReport, cohesiveness, particle_area
from .contour import (
    DEFAULT_BOUNDARY_SAMPLES,
    DEFAULT_HARMONICS,
    fit_fourier,
    rasterize,
    reconstruct,
    trace_boundary,
)
from .geometry import Point2, Segment, _point_segment_distance_xy, polygon_area
from .mpc import MpcConfig, ToolState

log = logging.getLogger("herdplan.sim")

RELAX_ITERATIONS = 8
OVERLAP_TOLERANCE = 1e-6
_SQUEEZE_FACTOR = 0.5  # tool penetration above this fraction of r = squeezed
# Plowing a dense pile needs several projection/relax rounds per substep for
# the displacement to propagate through the contact network; rounds past the
# first converged one cost nothing because the loop exits early. A particle
# wedged against a wall plateaus instead of converging and still fails.
_RECOVERY_ROUNDS = 12
_SETTLE_TOLERANCE = 1e-7
_SETTLE_CAP = 200


class SqueezeError(RuntimeError):
    """A particle is pinched between the tool and a wall with no way out."""

    def __init__(self, particle_index: int, substep: int):
        super().__init__(
            f"particle {particle_index} squeezed at substep {substep}"
        )
        self.particle_index = particle_index
        self.substep = substep


class PackingError(RuntimeError):
    """Rejection sampling could not place the requested particles."""


@dataclass(frozen=True)
class Rect:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ValueError("rectangle must have positive extent")

    def contains(self, x: float, y: float) -> bool:
        return self.xmin <= x <= self.xmax and self.ymin <= y <= self.ymax


def standard_walls(arena: Rect, gate: Point2, gate_width: float) -> tuple:
    """Two collinear wall segments leaving a gate opening between them."""
    half = gate_width / 2.0
    return (
        Segment(Point2(arena.xmin, gate.y), Point2(gate.x - half, gate.y)),
        Segment(Point2(gate.x + half, gate.y), Point2(arena.xmax, gate.y)),
    )


@dataclass(frozen=True)
class WorldConfig:
    """Static world description; `walls` defaults to the standard gate wall."""

    arena: Rect = Rect(0.0, 0.0, 1.2, 0.9)
    gate: Point2 = Point2(0.6, 0.15)
    gate_width: float = 0.24
    walls: tuple = ()
    container: Optional[Rect] = None
    particle_radius: float = 0.01
    crossbar_length: float = 0.12
    stem_length: float = 0.10
    rng_seed: int = 0
    substep: float = 0.005

    def __post_init__(self):
        if self.gate_width <= 2.0 * self.particle_radius:
            raise ValueError("gate width must exceed the particle diameter")
        if self.substep > self.particle_radius / 2.0:
            raise ValueError("substep must be at most half the particle radius")
        if not self.walls:
            object.__setattr__(
                self, "walls", standard_walls(self.arena, self.gate, self.gate_width)
            )
        if self.container is None:
            # The container box is slightly wider than the opening so a
            # particle crossing the gate diagonally still lands inside it.
            half = self.gate_width / 2.0 + 0.02
            object.__setattr__(
                self,
                "container",
                Rect(
                    self.gate.x - half,
                    self.arena.ymin - 0.05,
                    self.gate.x + half,
                    self.gate.y,
                ),
            )

    def parked_pose(self) -> ToolState:
        return ToolState(self.arena.xmax - 0.08, self.arena.ymax - 0.08, -math.pi / 2)

    def tool_extent(self) -> float:
        return max(self.crossbar_length / 2.0, self.stem_length)

    def wall_array(self) -> np.ndarray:
        return np.array(
            [[s.a.x, s.a.y, s.b.x, s.b.y] for s in self.walls], dtype=float
        ).reshape(-1, 4)


@dataclass(frozen=True)
class MetricsConfig:
    """Contour/cohesion pipeline settings for computeMetrics."""

    harmonics: int = DEFAULT_HARMONICS
    boundary_samples: int = DEFAULT_BOUNDARY_SAMPLES
    metric_samples: int = 64
    dilation: float = 0.012
    resolution: float = 0.0025
    gap_epsilon: float = 0.01


@dataclass
class WorldState:
    """Tabletop snapshot. positions is an (n, 2) array of particle centers."""

    positions: np.ndarray
    tool_pose: ToolState
    delivered_count: int = 0
    step_index: int = 0
    initial_count: int = 0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        if self.initial_count == 0:
            self.initial_count = len(self.positions) + self.delivered_count

    @property
    def remaining_count(self) -> int:
        return len(self.positions)

    def particles(self) -> list:
        return [Point2(float(x), float(y)) for x, y in self.positions]

    def copy(self) -> "WorldState":
        return WorldState(
            self.positions.copy(),
            self.tool_pose,
            self.delivered_count,
            self.step_index,
            self.initial_count,
        )


@dataclass(frozen=True)
class StepMetrics:
    """Per-action measurement row logged to the episode CSV."""

    remaining_count: int
    pushed_this_action: int
    pushing_efficiency: float
    centroid_gate_distance: float
    group_area: float
    cohesion: Optional[CohesionReport]
    connected_components: int


@dataclass(frozen=True)
class DistributionSpec:
    """Initial particle layout: disc, rect, annulus, or a points file."""

    shape: str
    count: int = 0
    center: Point2 = Point2(0.6, 0.5)
    extent: tuple = ()
    path: Optional[str] = None

    def __post_init__(self):
        shapes = ("disc", "rect", "annulus", "points_file")
        if self.shape not in shapes:
            raise ValueError(f"distribution shape must be one of {shapes}")
        if self.shape == "points_file":
            if not self.path:
                raise ValueError("points_file distribution needs a path")
        elif self.count < 1:
            raise ValueError("distribution count must be at least 1")


def tool_segment_array(pose: ToolState, crossbar: float, stem: float) -> np.ndarray:
    """Crossbar and stem as rows of (ax, ay, bx, by)."""
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    hx, hy = -s * crossbar / 2.0, c * crossbar / 2.0  # crossbar half-vector
    return np.array(
        [
            [pose.x - hx, pose.y - hy, pose.x + hx, pose.y + hy],
            [pose.x, pose.y, pose.x - stem * c, pose.y - stem * s],
        ]
    )


def tool_segments(pose: ToolState, config: WorldConfig) -> tuple:
    arr = tool_segment_array(pose, config.crossbar_length, config.stem_length)
    return tuple(
        Segment(Point2(a[0], a[1]), Point2(a[2], a[3])) for a in arr
    )


# --- numba kernels -------------------------------------------------------


@njit(cache=True)
def _project_tool(pos, active, n, tipx, tipy, theta, crossbar, stem, dpx, dpy, dth, r):
    """Push penetrating particles off both tool segments.

    The outward direction is the radial offset from the closest tool point;
    when that direction opposes the closest point's motion (the segment
    stepped past the particle center this substep) it is mirrored across the
    segment so the particle stays on the swept side.
    """
    c = math.cos(theta)
    s = math.sin(theta)
    hx = -s * crossbar * 0.5
    hy = c * crossbar * 0.5
    for seg in range(2):
        if seg == 0:
            ax, ay, bx, by = tipx - hx, tipy - hy, tipx + hx, tipy + hy
        else:
            ax, ay, bx, by = tipx, tipy, tipx - stem * c, tipy - stem * s
        vx, vy = bx - ax, by - ay
        vv = vx * vx + vy * vy
        sl = math.sqrt(vv)
        for i in range(n):
            if not active[i]:
                continue
            px, py = pos[i, 0], pos[i, 1]
            wx, wy = px - ax, py - ay
            t = (wx * vx + wy * vy) / vv
            if t < 0.0:
                t = 0.0
            elif t > 1.0:
                t = 1.0
            qx = ax + t * vx
            qy = ay + t * vy
            dx, dy = px - qx, py - qy
            d = math.sqrt(dx * dx + dy * dy)
            if d >= r:
                continue
            # Velocity of the closest tool point over this substep.
            mvx = dpx - dth * (qy - tipy)
            mvy = dpy + dth * (qx - tipx)
            if d > 1e-12:
                ox, oy = dx / d, dy / d
                if ox * mvx + oy * mvy < -1e-12:
                    dots = ox * (vx / sl) + oy * (vy / sl)
                    ox = 2.0 * dots * (vx / sl) - ox
                    oy = 2.0 * dots * (vy / sl) - oy
            else:
                mv = math.sqrt(mvx * mvx + mvy * mvy)
                if mv > 1e-12:
                    ox, oy = mvx / mv, mvy / mv
                else:
                    ox, oy = -vy / sl, vx / sl
            pos[i, 0] = qx + r * ox
            pos[i, 1] = qy + r * oy


@njit(cache=True)
def _relax_pairs(pos, active, n, r, iters):
    """Gauss-Seidel passes splitting every pairwise overlap equally."""
    dd = 2.0 * r
    for _ in range(iters):
        for i in range(n - 1):
            if not active[i]:
                continue
            for j in range(i + 1, n):
                if not active[j]:
                    continue
                dx = pos[i, 0] - pos[j, 0]
                dy = pos[i, 1] - pos[j, 1]
                d2 = dx * dx + dy * dy
                if d2 >= dd * dd:
                    continue
                d = math.sqrt(d2)
                if d > 1e-12:
                    corr = 0.5 * (dd - d) / d
                    cx, cy = dx * corr, dy * corr
                else:
                    cx, cy = r, 0.0
                pos[i, 0] += cx
                pos[i, 1] += cy
                pos[j, 0] -= cx
                pos[j, 1] -= cy


@njit(cache=True)
def _project_walls(pos, active, n, walls, axmin, aymin, axmax, aymax, r):
    for i in range(n):
        if not active[i]:
            continue
        for w in range(walls.shape[0]):
            ax, ay, bx, by = walls[w, 0], walls[w, 1], walls[w, 2], walls[w, 3]
            vx, vy = bx - ax, by - ay
            vv = vx * vx + vy * vy
            wx, wy = pos[i, 0] - ax, pos[i, 1] - ay
            t = (wx * vx + wy * vy) / vv
            if t < 0.0:
                t = 0.0
            elif t > 1.0:
                t = 1.0
            qx = ax + t * vx
            qy = ay + t * vy
            dx, dy = pos[i, 0] - qx, pos[i, 1] - qy
            d = math.sqrt(dx * dx + dy * dy)
            if d >= r:
                continue
            if d > 1e-12:
                pos[i, 0] = qx + r * dx / d
                pos[i, 1] = qy + r * dy / d
            else:
                sl = math.sqrt(vv)
                pos[i, 0] = qx - r * vy / sl
                pos[i, 1] = qy + r * vx / sl
        if pos[i, 0] < axmin + r:
            pos[i, 0] = axmin + r
        elif pos[i, 0] > axmax - r:
            pos[i, 0] = axmax - r
        if pos[i, 1] < aymin + r:
            pos[i, 1] = aymin + r
        elif pos[i, 1] > aymax - r:
            pos[i, 1] = aymax - r


@njit(cache=True)
def _tool_residual(pos, active, n, tipx, tipy, theta, crossbar, stem, r):
    """Worst remaining tool penetration and the particle carrying it."""
    c = math.cos(theta)
    s = math.sin(theta)
    hx = -s * crossbar * 0.5
    hy = c * crossbar * 0.5
    worst = 0.0
    worst_i = -1
    for seg in range(2):
        if seg == 0:
            ax, ay, bx, by = tipx - hx, tipy - hy, tipx + hx, tipy + hy
        else:
            ax, ay, bx, by = tipx, tipy, tipx - stem * c, tipy - stem * s
        vx, vy = bx - ax, by - ay
        vv = vx * vx + vy * vy
        for i in range(n):
            if not active[i]:
                continue
            wx, wy = pos[i, 0] - ax, pos[i, 1] - ay
            t = (wx * vx + wy * vy) / vv
            if t < 0.0:
                t = 0.0
            elif t > 1.0:
                t = 1.0
            dx = pos[i, 0] - (ax + t * vx)
            dy = pos[i, 1] - (ay + t * vy)
            pen = r - math.sqrt(dx * dx + dy * dy)
            if pen > worst:
                worst = pen
                worst_i = i
    return worst, worst_i


@njit(cache=True)
def _pair_wall_residual(pos, active, n, walls, axmin, aymin, axmax, aymax, r):
    worst = 0.0
    dd = 2.0 * r
    for i in range(n):
        if not active[i]:
            continue
        for j in range(i + 1, n):
            if not active[j]:
                continue
            dx = pos[i, 0] - pos[j, 0]
            dy = pos[i, 1] - pos[j, 1]
            pen = dd - math.sqrt(dx * dx + dy * dy)
            if pen > worst:
                worst = pen
        for w in range(walls.shape[0]):
            ax, ay, bx, by = walls[w, 0], walls[w, 1], walls[w, 2], walls[w, 3]
            vx, vy = bx - ax, by - ay
            vv = vx * vx + vy * vy
            wx, wy = pos[i, 0] - ax, pos[i, 1] - ay
            t = (wx * vx + wy * vy) / vv
            if t < 0.0:
                t = 0.0
            elif t > 1.0:
                t = 1.0
            dx = pos[i, 0] - (ax + t * vx)
            dy = pos[i, 1] - (ay + t * vy)
            pen = r - math.sqrt(dx * dx + dy * dy)
            if pen > worst:
                worst = pen
    return worst


@njit(cache=True)
def _sweep_kernel(
    pos,
    active,
    poses,
    crossbar,
    stem,
    walls,
    axmin,
    aymin,
    axmax,
    aymax,
    gx,
    gy,
    ghalf,
    cxmin,
    cymin,
    cxmax,
    cymax,
    r,
    k_iters,
    squeeze_tol,
    recovery_rounds,
):
    """Advance the tool along poses (row 0 is the current pose).

    Returns (status, substep, particle): status 0 = ok, 1 = squeeze.
    Delivered particles are flagged inactive in place.
    """
    n = pos.shape[0]
    prevx = np.empty(n)
    prevy = np.empty(n)
    for sstep in range(1, poses.shape[0]):
        tipx, tipy, theta = poses[sstep, 0], poses[sstep, 1], poses[sstep, 2]
        dpx = tipx - poses[sstep - 1, 0]
        dpy = tipy - poses[sstep - 1, 1]
        dth = theta - poses[sstep - 1, 2]
        if dth > math.pi:
            dth -= 2.0 * math.pi
        elif dth <= -math.pi:
            dth += 2.0 * math.pi
        for i in range(n):
            prevx[i] = pos[i, 0]
            prevy[i] = pos[i, 1]

        for attempt in range(recovery_rounds + 1):
            _project_tool(
                pos, active, n, tipx, tipy, theta, crossbar, stem, dpx, dpy, dth, r
            )
            _relax_pairs(pos, active, n, r, k_iters)
            _project_walls(pos, active, n, walls, axmin, aymin, axmax, aymax, r)
            worst, worst_i = _tool_residual(
                pos, active, n, tipx, tipy, theta, crossbar, stem, r
            )
            if worst <= squeeze_tol:
                break
            if attempt == recovery_rounds:
                # Roll back to the last substep whose projections all
                # resolved so the reported state is feasible.
                for i in range(n):
                    pos[i, 0] = prevx[i]
                    pos[i, 1] = prevy[i]
                return 1, sstep, worst_i

        # Gate-crossing deliveries.
        for i in range(n):
            if not active[i]:
                continue
            if prevy[i] >= gy and pos[i, 1] < gy:
                t = (gy - prevy[i]) / (pos[i, 1] - prevy[i])
                xc = prevx[i] + t * (pos[i, 0] - prevx[i])
                if abs(xc - gx) <= ghalf:
                    if cxmin <= pos[i, 0] <= cxmax and cymin <= pos[i, 1] <= cymax:
                        active[i] = False
    return 0, 0, -1


@njit(cache=True)
def _settle_kernel(
    pos,
    active,
    tipx,
    tipy,
    theta,
    crossbar,
    stem,
    walls,
    axmin,
    aymin,
    axmax,
    aymax,
    r,
    k_iters,
    tol,
    cap,
):
    """Stationary relaxation until pair/wall overlaps drop below tol."""
    n = pos.shape[0]
    worst = 0.0
    for _ in range(cap):
        _project_tool(
            pos, active, n, tipx, tipy, theta, crossbar, stem, 0.0, 0.0, 0.0, r
        )
        _relax_pairs(pos, active, n, r, k_iters)
        _project_walls(pos, active, n, walls, axmin, aymin, axmax, aymax, r)
        worst = _pair_wall_residual(
            pos, active, n, walls, axmin, aymin, axmax, aymax, r
        )
        if worst <= tol:
            break
    return worst


# --- world construction ---------------------------------------------------


def _sample_position(rng, spec: DistributionSpec):
    cx, cy = spec.center.x, spec.center.y
    if spec.shape == "disc":
        (radius,) = spec.extent
        rad = radius * math.sqrt(rng.random())
        ang = 2.0 * math.pi * rng.random()
        return cx + rad * math.cos(ang), cy + rad * math.sin(ang)
    if spec.shape == "rect":
        w, h = spec.extent
        return (
            cx + (rng.random() - 0.5) * w,
            cy + (rng.random() - 0.5) * h,
        )
    # annulus
    r_in, r_out = spec.extent
    rad = math.sqrt(r_in * r_in + (r_out * r_out - r_in * r_in) * rng.random())
    ang = 2.0 * math.pi * rng.random()
    return cx + rad * math.cos(ang), cy + rad * math.sin(ang)


def _position_admissible(x: float, y: float, config: WorldConfig) -> bool:
    r = config.particle_radius
    a = config.arena
    if not (a.xmin + r <= x <= a.xmax - r and a.ymin + r <= y <= a.ymax - r):
        return False
    if config.container.contains(x, y):
        return False
    for s in config.walls:
        if _point_segment_distance_xy(x, y, s.a.x, s.a.y, s.b.x, s.b.y) < r:
            return False
    return True


def init_world(config: WorldConfig, spec: DistributionSpec) -> WorldState:
    """Seeded rejection sampling (or verbatim file load) of the start layout."""
    r = config.particle_radius
    if spec.shape == "points_file":
        pts = np.loadtxt(spec.path, dtype=float).reshape(-1, 2)
        if len(pts) == 0:
            raise PackingError("points file contains no particles")
        for i, (x, y) in enumerate(pts):
            if not _position_admissible(float(x), float(y), config):
                raise PackingError(f"particle {i} in points file is out of bounds")
        d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
        np.fill_diagonal(d, np.inf)
        if d.min() < 2 * r - OVERLAP_TOLERANCE:
            raise PackingError("points file contains overlapping particles")
        positions = pts
    else:
        rng = np.random.default_rng(config.rng_seed)
        placed = np.empty((spec.count, 2))
        count = 0
        min_d2 = (2 * r + 1e-4) ** 2
        for _ in range(100_000):
            if count == spec.count:
                break
            x, y = _sample_position(rng, spec)
            if not _position_admissible(x, y, config):
                continue
            if count:
                d2 = (placed[:count, 0] - x) ** 2 + (placed[:count, 1] - y) ** 2
                if d2.min() < min_d2:
                    continue
            placed[count] = (x, y)
            count += 1
        if count < spec.count:
            raise PackingError(
                f"placed only {count} of {spec.count} particles after 1e5 attempts"
            )
        positions = placed
    return WorldState(positions, config.parked_pose())


# --- tool motion ----------------------------------------------------------


def _pose_path(start: ToolState, target: ToolState, config: WorldConfig) -> np.ndarray:
    """Linear pose interpolation subdivided so relative motion <= substep."""
    dth = _mpc.wrap_angle(target.theta - start.theta)
    travel = math.hypot(target.x - start.x, target.y - start.y)
    measure = travel + abs(dth) * config.tool_extent()
    steps = max(1, int(math.ceil(measure / config.substep)))
    ts = np.linspace(0.0, 1.0, steps + 1)
    path = np.empty((steps + 1, 3))
    path[:, 0] = start.x + ts * (target.x - start.x)
    path[:, 1] = start.y + ts * (target.y - start.y)
    path[:, 2] = start.theta + ts * dth
    return path


def _run_sweep(state: WorldState, poses: np.ndarray, config: WorldConfig):
    """Shared sweep + settle.

    Returns (advanced state, stall). Stall is None for a completed sweep;
    on an unresolvable pinch it is the SqueezeError describing it, and the
    state is the one at the last feasible substep (an arm halting on a
    force spike rather than grinding through the jam).
    """
    pos = state.positions.copy()
    n = len(pos)
    active = np.ones(n, dtype=np.bool_)
    r = config.particle_radius
    c = config.container
    stall = None
    if n:
        status, sstep, pidx = _sweep_kernel(
            pos,
            active,
            poses,
            config.crossbar_length,
            config.stem_length,
            config.wall_array(),
            config.arena.xmin,
            config.arena.ymin,
            config.arena.xmax,
            config.arena.ymax,
            config.gate.x,
            config.gate.y,
            config.gate_width / 2.0,
            c.xmin,
            c.ymin,
            c.xmax,
            c.ymax,
            r,
            RELAX_ITERATIONS,
            _SQUEEZE_FACTOR * r,
            _RECOVERY_ROUNDS,
        )
        if status == 1:
            stall = SqueezeError(int(pidx), int(sstep))
            poses = poses[:max(int(sstep), 1)]
        final = poses[-1]
        _settle_kernel(
            pos,
            active,
            final[0],
            final[1],
            final[2],
            config.crossbar_length,
            config.stem_length,
            config.wall_array(),
            config.arena.xmin,
            config.arena.ymin,
            config.arena.xmax,
            config.arena.ymax,
            r,
            RELAX_ITERATIONS,
            _SETTLE_TOLERANCE,
            _SETTLE_CAP,
        )
    if n:
        # Settling can push a particle across the gate line after the
        # per-substep crossing checks ran; the walls make the gate gap the
        # only way below the line, so ending below it means delivered.
        below = active & (pos[:, 1] < config.gate.y)
        if below.any():
            active[below] = False
    delivered = int(n - active.sum())
    pose = ToolState(float(poses[-1, 0]), float(poses[-1, 1]), float(poses[-1, 2]))
    out = WorldState(
        pos[active],
        pose,
        state.delivered_count + delivered,
        state.step_index + 1,
        state.initial_count,
    )
    return out, stall


def step_tool(state: WorldState, target_pose: ToolState, config: WorldConfig) -> WorldState:
    """Sweep the tool to target_pose along a straight interpolated path."""
    out, stall = _run_sweep(
        state, _pose_path(state.tool_pose, target_pose, config), config
    )
    if stall is not None:
        raise stall
    return out


def place_tool(state: WorldState, pose: ToolState, config: WorldConfig) -> WorldState:
    """Teleport the tool (lifted over the table) and descend at pose.

    Particles under the descending tool footprint are pushed out radially;
    an unresolvable overlap raises SqueezeError like any sweep.
    """
    poses = np.array(
        [[pose.x, pose.y, pose.theta], [pose.x, pose.y, pose.theta]]
    )
    lifted = WorldState(
        state.positions,
        pose,
        state.delivered_count,
        state.step_index,
        state.initial_count,
    )
    out, stall = _run_sweep(lifted, poses, config)
    if stall is not None:
        raise stall
    return out


def _as_point(p) -> Point2:
    return p if isinstance(p, Point2) else Point2(float(p[0]), float(p[1]))


def _reference_pose(waypoints, i: int) -> ToolState:
    """Reference for leg i: next waypoint, heading toward the one after it."""
    w1 = waypoints[i + 1]
    look = waypoints[i + 2] if i + 2 < len(waypoints) else w1
    base = waypoints[i] if look is w1 else w1
    dx, dy = look.x - base.x, look.y - base.y
    if math.hypot(dx, dy) < 1e-12:
        dx, dy = w1.x - waypoints[i].x, w1.y - waypoints[i].y
    theta = math.atan2(dy, dx)
    return ToolState(w1.x, w1.y, theta)


def _lift_clear(p: Point2, config: WorldConfig, margin: float) -> Point2:
    """Move a tool position off the walls to `margin` clearance.

    Positions past the gate line but outside the gate gap are first pulled
    back to the table side; lifting those radially would park the tool in
    the container strip and force the next sweep back through the gate.
    """
    walls = config.wall_array()
    if not len(walls):
        return p
    x, y = p.x, p.y
    if y < config.gate.y + margin and abs(x - config.gate.x) > config.gate_width / 2.0:
        y = config.gate.y + margin
    d, gx, gy = _mpc._nearest_obstacle(x, y, walls)
    if d >= margin:
        return Point2(x, y)
    if gx == 0.0 and gy == 0.0:
        gx, gy = 0.0, 1.0
    return Point2(x + (margin - d) * gx, y + (margin - d) * gy)


def execute_trajectory(
    state: WorldState,
    waypoints,
    mpc_config: MpcConfig,
    config: WorldConfig,
    metrics_config: Optional[MetricsConfig] = None,
    terminal: bool = False,
    sweep_log: Optional[list] = None,
) -> tuple:
    """Approach the first waypoint and follow the refined path.

    The tool is placed a stem length behind the first waypoint (outside the
    group), then each waypoint pair is refined and swept. Non-terminal calls
    advance a single pair; a terminal push runs the full remaining path.
    Returns (new state, metrics for this action). When sweep_log is a list
    it receives the (M, 3) pose array of every sweep performed.
    """
    # Waypoints hovering inside the wall-clearance band (tree nodes can land
    # on the gate walls) would make the tracking reference infeasible, so
    # every waypoint is lifted to where the refiner's hinge penalty is zero.
    lift = mpc_config.d_min + mpc_config.clearance_margin
    wp = [_lift_clear(_as_point(w), config, lift) for w in waypoints]
    if len(wp) < 2:
        raise ValueError("need at least two waypoints")
    metrics_config = metrics_config or MetricsConfig()
    if state.remaining_count == 0:
        return state, compute_metrics(state, metrics_config, config)

    before = state.delivered_count
    ux, uy = wp[1].x - wp[0].x, wp[1].y - wp[0].y
    norm = math.hypot(ux, uy)
    if norm < 1e-12:
        raise ValueError("first two waypoints coincide")
    ux, uy = ux / norm, uy / norm
    tip = _lift_clear(
        Point2(
            wp[0].x - config.stem_length * ux,
            wp[0].y - config.stem_length * uy,
        ),
        config,
        mpc_config.d_min + 0.005,
    )
    approach = ToolState(tip.x, tip.y, math.atan2(uy, ux))
    state = place_tool(state, approach, config)

    obstacles = list(config.walls)
    last_pair = len(wp) - 2
    for i in range(0, last_pair + 1):
        ref = _reference_pose(wp, i)
        refined = _mpc.refine(state.tool_pose, ref, obstacles, mpc_config)
        poses = [state.tool_pose.as_array().reshape(1, 3)]
        for a, b in zip(refined.states, refined.states[1:]):
            seg = _pose_path(a, b, config)
            poses.append(seg[1:])
        full = np.vstack(poses)
        state, stall = _run_sweep(state, full, config)
        if sweep_log is not None:
            sweep_log.append(full if stall is None else full[: stall.substep])
        if stall is not None:
            # The sweep jammed a particle with nowhere to go; stop the
            # action here and let the task loop check and replan.
            log.info("sweep stalled (%s); lifting tool to replan", stall)
            break
        if not terminal:
            break
        if state.remaining_count == 0:
            break

    pushed = state.delivered_count - before
    metrics = compute_metrics(state, metrics_config, config, pushed_this_action=pushed)
    return state, metrics


# --- metrics ---------------------------------------------------------------


def connected_component_count(
    positions: np.ndarray, particle_radius: float, gap_epsilon: float
) -> int:
    n = len(positions)
    if n == 0:
        return 0
    d = np.linalg.norm(positions[:, None, :] - positions[None, :, :], axis=2)
    adj = d <= 2.0 * particle_radius + gap_epsilon
    count, _ = _sparse_components(csr_matrix(adj), directed=False)
    return int(count)


def _largest_cluster(
    positions: np.ndarray, particle_radius: float, dilation: float
) -> np.ndarray:
    """Particles of the largest cluster under dilated-disc connectivity.

    Two particles join when their dilated discs overlap, which is the same
    notion of contact the rasterized contour uses, so the returned subset is
    the particle set the traced boundary actually encloses.
    """
    n = len(positions)
    if n <= 1:
        return positions
    d = np.linalg.norm(positions[:, None, :] - positions[None, :, :], axis=2)
    adj = d <= 2.0 * (particle_radius + dilation)
    count, labels = _sparse_components(csr_matrix(adj), directed=False)
    if count <= 1:
        return positions
    sizes = np.bincount(labels)
    return positions[labels == int(np.argmax(sizes))]


def group_contour(
    positions: np.ndarray, particle_radius: float, metrics_config: MetricsConfig
):
    """Contour pipeline: rasterize, trace, fit, reconstruct.

    Returns (descriptor, reconstructed ContourSamples).
    """
    grid = rasterize(
        positions,
        particle_radius,
        metrics_config.dilation,
        metrics_config.resolution,
    )
    boundary = trace_boundary(grid, metrics_config.boundary_samples)
    desc = fit_fourier(boundary, metrics_config.harmonics)
    return desc, reconstruct(desc, metrics_config.metric_samples)


def compute_metrics(
    state: WorldState,
    metrics_config: MetricsConfig,
    config: WorldConfig,
    pushed_this_action: int = 0,
) -> StepMetrics:
    """Contour → Fourier → cohesion pipeline plus connectivity counts."""
    n = state.remaining_count
    efficiency = float(pushed_this_action)
    if n == 0:
        return StepMetrics(0, pushed_this_action, efficiency, 0.0, 0.0, None, 0)

    centroid = state.positions.mean(axis=0)
    cdist = float(math.hypot(centroid[0] - config.gate.x, centroid[1] - config.gate.y))
    # The contour wraps the largest cluster only, so cohesion is measured on
    # that cluster's particles; counting detached stragglers in alpha would
    # report densities above the packing limit whenever the group splits.
    cluster = _largest_cluster(
        state.positions, config.particle_radius, metrics_config.dilation
    )
    _, recon = group_contour(cluster, config.particle_radius, metrics_config)
    beta = abs(polygon_area(recon.points))
    alpha = particle_area(len(cluster), config.particle_radius)
    report = cohesiveness(alpha, beta, recon.points)
    comps = connected_component_count(
        state.positions, config.particle_radius, metrics_config.gap_epsilon
    )
    return StepMetrics(
        remaining_count=n,
        pushed_this_action=pushed_this_action,
        pushing_efficiency=efficiency,
        centroid_gate_distance=cdist,
        group_area=beta,
        cohesion=report,
        connected_components=comps,
    )


def check_invariants(state: WorldState, config: WorldConfig) -> None:
    """Raise AssertionError on non-penetration or conservation violations."""
    n = state.remaining_count
    assert n + state.delivered_count == state.initial_count, "particle count drift"
    r = config.particle_radius
    if n > 1:
        d = np.linalg.norm(
            state.positions[:, None, :] - state.positions[None, :, :], axis=2
        )
        np.fill_diagonal(d, np.inf)
        dmin = float(d.min())
        assert dmin >= 2 * r - OVERLAP_TOLERANCE, f"particle overlap: {dmin:.8f}"
    if n:
        a = config.arena
        x, y = state.positions[:, 0], state.positions[:, 1]
        assert np.all(x >= a.xmin + r - OVERLAP_TOLERANCE), "particle outside arena"
        assert np.all(x <= a.xmax - r + OVERLAP_TOLERANCE), "particle outside arena"
        assert np.all(y >= a.ymin + r - OVERLAP_TOLERANCE), "particle outside arena"
        assert np.all(y <= a.ymax - r + OVERLAP_TOLERANCE), "particle outside arena"
        for s in config.walls:
            for px, py in state.positions:
                dw = _point_segment_distance_xy(px, py, s.a.x, s.a.y, s.b.x, s.b.y)
                assert dw >= r - OVERLAP_TOLERANCE, f"particle in wall ({dw:.8f})"
