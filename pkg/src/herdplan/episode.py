"""One full seeded episode: the planner loop driving the simulator.

Each iteration asks the rule policy for an action and performs it. Herd
actions replan the action tree, select the candidate path nearest the
verifier's suggested start, and sweep its first waypoint pair; push actions
drive straight to the gate and run the path to the end. The direct-push
baseline skips the action tree entirely and always pushes from the group's
far side, which is what scatters it.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components as _sparse_components

from .action_tree import TrajectorySet, plan_trajectories
from .geometry import Point2, points_mean
from .mpc import InfeasibleTrajectoryError, MpcConfig
from .planner import (
    ActionKind,
    GroundTruthVerifier,
    Phase,
    PlannerThresholds,
    TaskState,
    VerifierDecision,
    VerifierInterface,
    apply_action,
    next_action,
    select_trajectory,
    verify_remaining,
)
from .sim import (
    DistributionSpec,
    MetricsConfig,
    SqueezeError,
    StepMetrics,
    WorldConfig,
    WorldState,
    check_invariants,
    compute_metrics,
    execute_trajectory,
    init_world,
    place_tool,
)

log = logging.getLogger("herdplan.episode")

POLICIES = ("herding", "direct")


@dataclass(frozen=True)
class ActionRecord:
    index: int
    action: str
    metrics: StepMetrics


@dataclass
class EpisodeResult:
    success: bool
    failure_reason: Optional[str]
    delivered: int
    initial_count: int
    records: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    final_state: Optional[WorldState] = None

    @property
    def delivered_fraction(self) -> float:
        return self.delivered / self.initial_count if self.initial_count else 0.0


def _plan(state: WorldState, metrics: StepMetrics, thresholds: PlannerThresholds,
          gate: Point2) -> Optional[TrajectorySet]:
    if state.remaining_count < 2:
        return None
    zeta = metrics.cohesion.zeta if metrics.cohesion else 0.0
    centroid = points_mean(state.positions)
    return plan_trajectories(
        state.particles(),
        centroid,
        gate,
        zeta,
        thresholds.zeta_threshold,
        thresholds.target_count,
        thresholds.tool_segment_length,
    )


def _farthest_from_gate(state: WorldState, gate: Point2) -> Point2:
    d = [
        (x - gate.x) ** 2 + (y - gate.y) ** 2 for x, y in state.positions
    ]
    i = max(range(len(d)), key=lambda k: (d[k], -k))
    return Point2(float(state.positions[i][0]), float(state.positions[i][1]))


def _gather_waypoints(
    state: WorldState, particle_radius: float, gap_epsilon: float
) -> tuple:
    """Sweep the farthest detached cluster into contact with the main one.

    Gather mode for a disconnected group: herding along the gate tree
    would smear outliers gate-ward and extrude particles before the
    clusters reconnect. The sweep starts at the cluster's far particle and
    stops a particle diameter short of the nearest main-cluster particle,
    so the carried particles make contact without plowing a channel
    through the group. The gate-rooted tree takes over once the group is
    one connected component.
    """
    pos = state.positions
    d = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=2)
    adj = d <= 2.0 * particle_radius + gap_epsilon
    _, labels = _sparse_components(csr_matrix(adj), directed=False)
    main = int(np.argmax(np.bincount(labels)))
    main_center = pos[labels == main].mean(axis=0)
    others = np.flatnonzero(labels != main)
    far = others[np.argmax(np.linalg.norm(pos[others] - main_center, axis=1))]
    clump = pos[labels == labels[far]]
    main_pts = pos[labels == main]
    near = main_pts[
        np.argmin(np.linalg.norm(main_pts - clump.mean(axis=0), axis=1))
    ]
    u = near - pos[far]
    u = u / max(float(np.linalg.norm(u)), 1e-12)
    stop = near - 3.0 * particle_radius * u
    return (
        Point2(float(pos[far][0]), float(pos[far][1])),
        Point2(float(stop[0]), float(stop[1])),
    )


def run_episode(
    config: WorldConfig,
    distribution: DistributionSpec,
    metrics_config: Optional[MetricsConfig] = None,
    mpc_config: Optional[MpcConfig] = None,
    thresholds: Optional[PlannerThresholds] = None,
    policy: str = "herding",
    verifier: Optional[VerifierInterface] = None,
    validate: bool = True,
    frame_hook: Optional[Callable] = None,
) -> EpisodeResult:
    """Run the task loop to completion, failure, or the action cap.

    A successful episode ends with Release on an empty table. Squeezed
    particles and infeasible refinements end the episode as failures rather
    than raising, so batch runs always produce a row. When validate is true
    the simulator invariants are asserted after every action.
    """
    if policy not in POLICIES:
        raise ValueError(f"policy must be one of {POLICIES}")
    metrics_config = metrics_config or MetricsConfig()
    mpc_config = mpc_config or MpcConfig()
    thresholds = thresholds or PlannerThresholds()
    state = init_world(config, distribution)
    verifier = verifier or GroundTruthVerifier(config.gate)
    task = TaskState()
    metrics = compute_metrics(state, metrics_config, config)
    result = EpisodeResult(
        success=False,
        failure_reason=None,
        delivered=0,
        initial_count=state.initial_count,
    )
    candidates: Optional[TrajectorySet] = None
    decision: Optional[VerifierDecision] = None
    blocked_target: Optional[tuple] = None

    while len(task.action_log) < thresholds.max_actions:
        action = next_action(task, metrics, thresholds)
        if action == ActionKind.HERD and (
            policy == "direct" or state.remaining_count < 2
        ):
            action = ActionKind.PUSH

        sweeps: list = []
        waypoints = None
        try:
            if action == ActionKind.GRASP:
                pass  # The arm picks the tool up; nothing moves on the table.
            elif action == ActionKind.HERD:
                gathering = (
                    metrics.connected_components > 1
                    and state.remaining_count >= 2
                )
                if gathering:
                    waypoints = _gather_waypoints(
                        state, config.particle_radius, metrics_config.gap_epsilon
                    )
                    if blocked_target is not None and (
                        math.hypot(
                            waypoints[0].x - blocked_target[0],
                            waypoints[0].y - blocked_target[1],
                        )
                        < 2.0 * config.particle_radius
                    ):
                        # The last sweep at this clump moved nothing (a
                        # wall pinch the bar cannot resolve); tree-herd
                        # until the surrounding geometry changes.
                        gathering = False
                        waypoints = None
                if gathering:
                    before = (
                        metrics.connected_components,
                        state.remaining_count,
                        metrics.group_area,
                        metrics.centroid_gate_distance,
                    )
                    try:
                        state, metrics = execute_trajectory(
                            state,
                            waypoints,
                            mpc_config,
                            config,
                            metrics_config,
                            terminal=False,
                            sweep_log=sweeps,
                        )
                    except (InfeasibleTrajectoryError, ValueError) as exc:
                        # The merge leg has no clear tool path (a clump
                        # wedged by a wall can leave the bar nowhere to
                        # start, and wall lifting can collapse a short leg
                        # to a point); herd along the tree instead.
                        log.info("gather leg infeasible (%s); using tree", exc)
                        blocked_target = (waypoints[0].x, waypoints[0].y)
                        gathering = False
                        waypoints = None
                        sweeps = []
                    else:
                        moved = (
                            metrics.connected_components != before[0]
                            or state.remaining_count != before[1]
                            or abs(metrics.group_area - before[2]) > 1e-4
                            or abs(metrics.centroid_gate_distance - before[3])
                            > 1e-3
                        )
                        blocked_target = (
                            None
                            if moved
                            else (waypoints[0].x, waypoints[0].y)
                        )
                if not gathering:
                    if candidates is None:
                        candidates = _plan(state, metrics, thresholds, config.gate)
                    suggested = decision.suggested_start if decision else None
                    waypoints = select_trajectory(
                        candidates, state, config.gate, suggested
                    )
                    state, metrics = execute_trajectory(
                        state,
                        waypoints,
                        mpc_config,
                        config,
                        metrics_config,
                        terminal=False,
                        sweep_log=sweeps,
                    )
            elif action == ActionKind.PUSH:
                start = decision.suggested_start if decision else None
                if start is None or policy == "direct":
                    start = _farthest_from_gate(state, config.gate)
                waypoints = (start, config.gate)
                state, metrics = execute_trajectory(
                    state,
                    waypoints,
                    mpc_config,
                    config,
                    metrics_config,
                    terminal=True,
                    sweep_log=sweeps,
                )
            elif action == ActionKind.CHECK:
                candidates = _plan(state, metrics, thresholds, config.gate)
                if candidates is not None:
                    starts = candidates.start_points()
                else:
                    starts = tuple(state.particles())
                decision = verify_remaining(state, verifier, starts)
                task.verifier_remaining = decision.remaining_particles
                metrics = compute_metrics(state, metrics_config, config)
            elif action == ActionKind.RELEASE:
                state = place_tool(state, config.parked_pose(), config)
        except (SqueezeError, InfeasibleTrajectoryError, ValueError) as exc:
            result.failure_reason = f"{action.value} failed: {exc}"
            log.warning("episode aborted: %s", result.failure_reason)
            break

        apply_action(task, action)
        result.records.append(ActionRecord(len(result.records), action.value, metrics))
        result.actions.append(action.value)
        if validate:
            check_invariants(state, config)
        if frame_hook is not None:
            frame_hook(
                len(result.records) - 1,
                action.value,
                state,
                waypoints if action in (ActionKind.HERD, ActionKind.PUSH) else None,
                sweeps,
            )
        if action in (ActionKind.HERD, ActionKind.PUSH):
            waypoints = None
        if task.phase == Phase.DONE:
            break
    else:
        result.failure_reason = "action cap reached before release"

    result.delivered = state.delivered_count
    result.final_state = state
    result.success = (
        result.failure_reason is None
        and task.phase == Phase.DONE
        and state.remaining_count == 0
    )
    if result.failure_reason is None and not result.success:
        result.failure_reason = "released with particles remaining"
    return result
