"""Symbolic herd/push/check task loop and completion verification.

The planner is a deterministic rule policy over five actions: grasp the
tool, herd (short guiding sweeps along the action-tree paths), push (a
terminal drive through the gate), check (verify whether particles remain
and replan), and release. The verification seam is pluggable: the default
verifier reads the simulator ground truth, and an external line-oriented
process can stand in for it.
"""

from __future__ import annotations

import logging
import math
import os
import select
import subprocess
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Protocol, Sequence

from .action_tree import TrajectorySet
from .geometry import Point2
from .sim import StepMetrics, WorldState

log = logging.getLogger("herdplan.planner")

VERIFIER_TIMEOUT = 5.0


class ActionKind(str, Enum):
    GRASP = "Grasp"
    HERD = "Herd"
    PUSH = "Push"
    CHECK = "Check"
    RELEASE = "Release"


class Phase(str, Enum):
    IDLE = "Idle"
    TOOL_HELD = "ToolHeld"
    HERDING = "Herding"
    PUSHING = "Pushing"
    VERIFYING = "Verifying"
    DONE = "Done"


@dataclass(frozen=True)
class PlannerThresholds:
    """Rule-policy knobs; distance defaults to 3 tool crossbar lengths."""

    push_count: int = 10
    push_distance: float = 0.36
    zeta_threshold: float = 55.0
    target_count: int = 5
    tool_segment_length: float = 0.12
    max_actions: int = 200


@dataclass
class TaskState:
    """Where the symbolic loop stands; actions append to action_log."""

    phase: Phase = Phase.IDLE
    last_action: Optional[ActionKind] = None
    action_log: list = field(default_factory=list)
    verifier_remaining: Optional[bool] = None


@dataclass(frozen=True)
class VerifierDecision:
    remaining_particles: bool
    suggested_start: Optional[Point2] = None

    def __post_init__(self):
        if self.suggested_start is not None and not self.remaining_particles:
            raise ValueError("suggested start requires remaining particles")


class VerifierInterface(Protocol):
    def decide(
        self, state: WorldState, candidate_starts: Sequence[Point2]
    ) -> VerifierDecision: ...


def _herd_or_push(metrics: StepMetrics, thresholds: PlannerThresholds) -> ActionKind:
    """Herd until the group is a single connected unit worth pushing.

    Pushing scatters whatever it does not extrude, so it only pays once the
    group sits near the gate as one component and is either cohesive enough
    (zeta at or above the threshold) or too small to bother herding further.
    """
    if metrics.centroid_gate_distance > thresholds.push_distance:
        return ActionKind.HERD
    if metrics.connected_components > 1 and metrics.remaining_count > 1:
        return ActionKind.HERD
    if metrics.remaining_count <= thresholds.push_count:
        return ActionKind.PUSH
    zeta = metrics.cohesion.zeta if metrics.cohesion else 0.0
    if zeta >= thresholds.zeta_threshold:
        return ActionKind.PUSH
    return ActionKind.HERD


def next_action(
    task: TaskState, metrics: StepMetrics, thresholds: PlannerThresholds
) -> ActionKind:
    """Rule policy of the task loop.

    Idle grasps; a held tool herds while the group is large or far from the
    gate and pushes otherwise; motion is always followed by a check; a check
    releases once the verifier reports the table empty.
    """
    if task.phase == Phase.DONE:
        raise RuntimeError("task already done")
    if task.phase == Phase.IDLE:
        return ActionKind.GRASP
    if task.phase in (Phase.HERDING, Phase.PUSHING):
        return ActionKind.CHECK
    if task.phase == Phase.VERIFYING:
        remains = task.verifier_remaining
        if remains is None:
            remains = metrics.remaining_count > 0
        if not remains:
            return ActionKind.RELEASE
        return _herd_or_push(metrics, thresholds)
    # ToolHeld
    return _herd_or_push(metrics, thresholds)


_TRANSITIONS = {
    ActionKind.GRASP: ((Phase.IDLE,), Phase.TOOL_HELD),
    ActionKind.HERD: ((Phase.TOOL_HELD, Phase.VERIFYING), Phase.HERDING),
    ActionKind.PUSH: ((Phase.TOOL_HELD, Phase.VERIFYING), Phase.PUSHING),
    ActionKind.CHECK: ((Phase.HERDING, Phase.PUSHING), Phase.VERIFYING),
    ActionKind.RELEASE: ((Phase.VERIFYING,), Phase.DONE),
}


def apply_action(task: TaskState, action: ActionKind) -> TaskState:
    """Advance the phase machine, enforcing the legal action order."""
    allowed, target = _TRANSITIONS[action]
    if task.phase not in allowed:
        raise RuntimeError(f"{action.value} is illegal from phase {task.phase.value}")
    task.phase = target
    task.last_action = action
    task.action_log.append(action)
    return task


class GroundTruthVerifier:
    """Reads the world state directly; suggests the farthest-from-gate particle."""

    def __init__(self, gate: Point2):
        self.gate = gate

    def decide(
        self, state: WorldState, candidate_starts: Sequence[Point2] = ()
    ) -> VerifierDecision:
        if state.remaining_count == 0:
            return VerifierDecision(False)
        d = [
            math.hypot(x - self.gate.x, y - self.gate.y) for x, y in state.positions
        ]
        i = max(range(len(d)), key=lambda k: (d[k], -k))
        x, y = state.positions[i]
        return VerifierDecision(True, Point2(float(x), float(y)))


class ExternalVerifier:
    """Line-protocol hook to an external checker process.

    Request:  "CHECK <snapshotPath> <k> <x1> <y1> ... <xk> <yk>"
    Response: "DONE" or "START <index>" (index into the candidate starts).
    The snapshot file holds one "x y" particle row per line. On timeout or
    a malformed reply the ground-truth verifier answers instead and a
    warning is logged.
    """

    def __init__(self, command, gate: Point2, snapshot_dir: str, timeout: float = VERIFIER_TIMEOUT):
        self.command = command
        self.timeout = timeout
        self.snapshot_dir = snapshot_dir
        self.fallback = GroundTruthVerifier(gate)
        self._proc: Optional[subprocess.Popen] = None
        self._snap_index = 0

    def _ensure_process(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        return self._proc

    def _write_snapshot(self, state: WorldState) -> str:
        os.makedirs(self.snapshot_dir, exist_ok=True)
        path = os.path.join(self.snapshot_dir, f"snapshot_{self._snap_index:04d}.txt")
        self._snap_index += 1
        with open(path, "w") as fh:
            for x, y in state.positions:
                fh.write(f"{x:.6f} {y:.6f}\n")
        return path

    def decide(
        self, state: WorldState, candidate_starts: Sequence[Point2] = ()
    ) -> VerifierDecision:
        try:
            proc = self._ensure_process()
            path = self._write_snapshot(state)
            parts = [f"CHECK {path} {len(candidate_starts)}"]
            parts += [f"{p.x:.6f} {p.y:.6f}" for p in candidate_starts]
            proc.stdin.write(" ".join(parts) + "\n")
            proc.stdin.flush()
            ready, _, _ = select.select([proc.stdout], [], [], self.timeout)
            if not ready:
                raise TimeoutError(f"no verifier reply within {self.timeout} s")
            line = proc.stdout.readline().strip()
            if line == "DONE":
                return VerifierDecision(False)
            if line.startswith("START "):
                idx = int(line.split()[1])
                if 0 <= idx < len(candidate_starts):
                    return VerifierDecision(True, candidate_starts[idx])
                raise ValueError(f"verifier start index {idx} out of range")
            raise ValueError(f"malformed verifier reply: {line!r}")
        except Exception as exc:  # noqa: BLE001 - any hook failure falls back
            log.warning("external verifier failed (%s); using ground truth", exc)
            return self.fallback.decide(state, candidate_starts)

    def close(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            self._proc.stdin.close()
            self._proc.terminate()
            self._proc.wait(timeout=2)
        self._proc = None


def verify_remaining(
    state: WorldState,
    verifier: VerifierInterface,
    candidate_starts: Sequence[Point2] = (),
) -> VerifierDecision:
    """Ask the verifier whether particles remain (and where to start next)."""
    return verifier.decide(state, candidate_starts)


def select_trajectory(
    candidates: TrajectorySet,
    state: WorldState,
    gate: Point2,
    suggested: Optional[Point2] = None,
):
    """Pick the candidate whose start is nearest the suggested start point.

    Without an external suggestion the farthest remaining particle from the
    gate stands in. Ties resolve to the lowest candidate index.
    """
    if state.remaining_count == 0:
        raise ValueError("no particles remain to select a trajectory for")
    if suggested is None:
        d = [math.hypot(x - gate.x, y - gate.y) for x, y in state.positions]
        i = max(range(len(d)), key=lambda k: (d[k], -k))
        suggested = Point2(float(state.positions[i][0]), float(state.positions[i][1]))
    starts = candidates.start_points()
    best = min(
        range(len(starts)), key=lambda i: (starts[i].distance_to(suggested), i)
    )
    return candidates.trajectories[best]
