"""Waypoint-to-waypoint tooltip trajectory refinement.

A unicycle rollout is optimized by projected gradient descent: quadratic
state and control costs pull the tooltip to the reference pose while a
quadratic hinge penalty keeps it clear of wall segments. The returned
trajectory must satisfy the clearance constraint at every step; the solver
escalates the penalty weight a few times before giving up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .geometry import Point2, Segment

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    r = a % TWO_PI
    if r > math.pi:
        r -= TWO_PI
    return r


@dataclass(frozen=True)
class ToolState:
    """Tooltip pose: position in meters, heading in radians, wrapped."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.theta)):
            raise ValueError("non-finite tool state")
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta], dtype=float)

    def position(self) -> Point2:
        return Point2(self.x, self.y)


@dataclass(frozen=True)
class ControlInput:
    """Linear and angular tooltip velocity."""

    v: float
    omega: float


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 50
    dt: float = 0.1
    q: np.ndarray = field(default_factory=lambda: np.diag([10.0, 10.0, 1.0]))
    r: np.ndarray = field(default_factory=lambda: np.diag([1.0, 1.0]))
    d_min: float = 0.06
    v_max: float = 0.5
    omega_max: float = 2.0
    # Starting clearance-penalty weight.  Deliberately soft: the first
    # descent round may cut into the clearance band, and the x10
    # escalation rounds then push the warm-started path outward around
    # the obstacle (penalty continuation).  Starting stiff instead traps
    # the path in a pressed local minimum in front of wall tips.
    penalty_weight: float = 10.0
    max_iterations: int = 400
    step_size: float = 2e-3
    convergence_tol: float = 1e-10
    # The optimizer aims for d_min + clearance_margin so that the tiny
    # residual violation of a converged penalty method still leaves the
    # true clearance nonnegative.
    clearance_margin: float = 0.01

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        r = np.asarray(self.r, dtype=float)
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if q.shape != (3, 3) or r.shape != (2, 2):
            raise ValueError("Q must be 3x3 and R 2x2")
        for name, m in (("Q", q), ("R", r)):
            if not np.allclose(m, m.T) or np.any(np.linalg.eigvalsh(m) <= 0):
                raise ValueError(f"{name} must be symmetric positive definite")
        if self.d_min <= 0:
            raise ValueError("d_min must be positive")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "r", r)


@dataclass(frozen=True)
class RefinedTrajectory:
    """Tool states (H+1), controls (H), and the achieved cost."""

    states: tuple
    controls: tuple
    cost: float

    def positions(self) -> np.ndarray:
        return np.array([[s.x, s.y] for s in self.states])

    def min_clearance(self, obstacles: Sequence[Segment], d_min: float) -> float:
        return min(clearance(s, obstacles, d_min) for s in self.states)


class InfeasibleTrajectoryError(RuntimeError):
    """Raised when refinement converges but still violates clearance."""

    def __init__(self, step_index: int, clearance_value: float):
        super().__init__(
            f"clearance violated at step {step_index} ({clearance_value:.6f} m)"
        )
        self.step_index = step_index
        self.clearance_value = clearance_value


# --- numba kernels -------------------------------------------------------


@njit(cache=True)
def _wrap(a):
    r = a % TWO_PI
    if r > math.pi:
        r -= TWO_PI
    return r


@njit(cache=True)
def _step(x, y, th, v, om, dt):
    nx = x + v * dt * math.cos(th)
    ny = y + v * dt * math.sin(th)
    nth = _wrap(th + om * dt)
    return nx, ny, nth


@njit(cache=True)
def _rollout(chi0, controls, dt):
    h = controls.shape[0]
    states = np.empty((h + 1, 3))
    states[0] = chi0
    for i in range(h):
        x, y, th = _step(
            states[i, 0], states[i, 1], states[i, 2], controls[i, 0], controls[i, 1], dt
        )
        states[i + 1, 0] = x
        states[i + 1, 1] = y
        states[i + 1, 2] = th
    return states


@njit(cache=True)
def _nearest_obstacle(px, py, obs):
    """Distance and direction to the nearest point among obstacle segments."""
    best = 1e300
    gx = 0.0
    gy = 0.0
    for k in range(obs.shape[0]):
        ax, ay, bx, by = obs[k, 0], obs[k, 1], obs[k, 2], obs[k, 3]
        vx, vy = bx - ax, by - ay
        wx, wy = px - ax, py - ay
        vv = vx * vx + vy * vy
        if vv > 0.0:
            t = (wx * vx + wy * vy) / vv
            if t < 0.0:
                t = 0.0
            elif t > 1.0:
                t = 1.0
        else:
            t = 0.0
        qx = ax + t * vx
        qy = ay + t * vy
        dx, dy = px - qx, py - qy
        d = math.sqrt(dx * dx + dy * dy)
        if d < best:
            best = d
            if d > 1e-12:
                gx, gy = dx / d, dy / d
            else:
                # Exactly on the segment the radial direction is undefined;
                # return the segment's left normal so a penalty gradient can
                # still push the state off the wall.
                nn = math.sqrt(vv)
                if nn > 0.0:
                    gx, gy = -vy / nn, vx / nn
                else:
                    gx, gy = 0.0, 1.0
    return best, gx, gy


@njit(cache=True)
def _cost(chi0, controls, chi_ref, q, r, obs, d_min, w, dt):
    h = controls.shape[0]
    states = _rollout(chi0, controls, dt)
    total = 0.0
    for i in range(h):
        e0 = states[i, 0] - chi_ref[0]
        e1 = states[i, 1] - chi_ref[1]
        e2 = _wrap(states[i, 2] - chi_ref[2])
        total += (
            e0 * (q[0, 0] * e0 + q[0, 1] * e1 + q[0, 2] * e2)
            + e1 * (q[1, 0] * e0 + q[1, 1] * e1 + q[1, 2] * e2)
            + e2 * (q[2, 0] * e0 + q[2, 1] * e1 + q[2, 2] * e2)
        )
        u0, u1 = controls[i, 0], controls[i, 1]
        total += u0 * (r[0, 0] * u0 + r[0, 1] * u1) + u1 * (r[1, 0] * u0 + r[1, 1] * u1)
    if obs.shape[0] > 0 and w > 0.0:
        for i in range(h + 1):
            d, _, _ = _nearest_obstacle(states[i, 0], states[i, 1], obs)
            viol = d_min - d
            if viol > 0.0:
                total += w * viol * viol
    return total


@njit(cache=True)
def _cost_and_grad(chi0, controls, chi_ref, q, r, obs, d_min, w, dt):
    h = controls.shape[0]
    states = _rollout(chi0, controls, dt)
    grad = np.zeros((h, 2))
    total = 0.0

    # Stage costs and their state gradients.
    lx = np.zeros((h + 1, 3))
    for i in range(h):
        e0 = states[i, 0] - chi_ref[0]
        e1 = states[i, 1] - chi_ref[1]
        e2 = _wrap(states[i, 2] - chi_ref[2])
        qe0 = q[0, 0] * e0 + q[0, 1] * e1 + q[0, 2] * e2
        qe1 = q[1, 0] * e0 + q[1, 1] * e1 + q[1, 2] * e2
        qe2 = q[2, 0] * e0 + q[2, 1] * e1 + q[2, 2] * e2
        total += e0 * qe0 + e1 * qe1 + e2 * qe2
        lx[i, 0] += 2.0 * qe0
        lx[i, 1] += 2.0 * qe1
        lx[i, 2] += 2.0 * qe2
        u0, u1 = controls[i, 0], controls[i, 1]
        total += u0 * (r[0, 0] * u0 + r[0, 1] * u1) + u1 * (r[1, 0] * u0 + r[1, 1] * u1)
    if obs.shape[0] > 0 and w > 0.0:
        for i in range(h + 1):
            d, gx, gy = _nearest_obstacle(states[i, 0], states[i, 1], obs)
            viol = d_min - d
            if viol > 0.0:
                total += w * viol * viol
                # d(viol^2)/d(x, y) = -2 viol * (gx, gy)
                lx[i, 0] += -2.0 * w * viol * gx
                lx[i, 1] += -2.0 * w * viol * gy

    # Backward adjoint sweep through the rollout.
    lam0, lam1, lam2 = lx[h, 0], lx[h, 1], lx[h, 2]
    for i in range(h - 1, -1, -1):
        th = states[i, 2]
        v = controls[i, 0]
        c, s = math.cos(th), math.sin(th)
        # dJ/du_i = 2 R u_i + (df/du)^T lambda_{i+1}
        u0, u1 = controls[i, 0], controls[i, 1]
        grad[i, 0] = 2.0 * (r[0, 0] * u0 + r[0, 1] * u1) + dt * (c * lam0 + s * lam1)
        grad[i, 1] = 2.0 * (r[1, 0] * u0 + r[1, 1] * u1) + dt * lam2
        # lambda_i = dl/dx_i + (df/dx)^T lambda_{i+1}
        nl0 = lx[i, 0] + lam0
        nl1 = lx[i, 1] + lam1
        nl2 = lx[i, 2] + (-v * dt * s) * lam0 + (v * dt * c) * lam1 + lam2
        lam0, lam1, lam2 = nl0, nl1, nl2
    return total, grad


# --- public operations ----------------------------------------------------


def dynamics_step(chi: ToolState, u: ControlInput, dt: float) -> ToolState:
    """Explicit-Euler unicycle update of the tooltip pose."""
    x, y, th = _step(chi.x, chi.y, chi.theta, u.v, u.omega, dt)
    return ToolState(x, y, th)


def clearance(chi: ToolState, obstacles: Sequence[Segment], d_min: float) -> float:
    """Signed margin: nearest obstacle distance minus the safety distance."""
    if not obstacles:
        return math.inf
    d, _, _ = _nearest_obstacle(chi.x, chi.y, _obstacle_array(obstacles))
    return d - d_min


def _obstacle_array(obstacles: Sequence[Segment]) -> np.ndarray:
    if not obstacles:
        return np.zeros((0, 4))
    return np.array(
        [[s.a.x, s.a.y, s.b.x, s.b.y] for s in obstacles], dtype=float
    )


def _controls_array(controls, horizon: int) -> np.ndarray:
    if isinstance(controls, np.ndarray):
        arr = np.asarray(controls, dtype=float)
    else:
        arr = np.array([[u.v, u.omega] for u in controls], dtype=float)
    if arr.shape != (horizon, 2):
        raise ValueError(f"expected {horizon} controls, got shape {arr.shape}")
    return arr


def rollout_cost(
    chi0: ToolState,
    controls,
    chi_ref: ToolState,
    obstacles: Sequence[Segment],
    config: MpcConfig,
) -> float:
    """Quadratic tracking + effort cost plus the clearance hinge penalty."""
    arr = _controls_array(controls, config.horizon)
    return float(
        _cost(
            chi0.as_array(),
            arr,
            chi_ref.as_array(),
            config.q,
            config.r,
            _obstacle_array(obstacles),
            config.d_min,
            config.penalty_weight,
            config.dt,
        )
    )


def cost_gradient(
    chi0: ToolState,
    controls,
    chi_ref: ToolState,
    obstacles: Sequence[Segment],
    config: MpcConfig,
) -> np.ndarray:
    """Gradient of rollout_cost w.r.t. every (v_i, omega_i), shape (H, 2).

    Computed by backward accumulation through the rollout, so it costs one
    extra sweep rather than 2H rollouts.
    """
    arr = _controls_array(controls, config.horizon)
    _, grad = _cost_and_grad(
        chi0.as_array(),
        arr,
        chi_ref.as_array(),
        config.q,
        config.r,
        _obstacle_array(obstacles),
        config.d_min,
        config.penalty_weight,
        config.dt,
    )
    return grad


def refine(
    chi0: ToolState,
    chi_ref: ToolState,
    obstacles: Sequence[Segment],
    config: MpcConfig,
) -> RefinedTrajectory:
    """Projected gradient descent from zero controls to a feasible trajectory.

    Control iterates are clipped to the actuation box after every gradient
    step; a step is only accepted if it does not increase the cost, with the
    step size adapting by halving/growth. If the converged solution violates
    the clearance constraint the penalty weight escalates (x10 per round,
    warm-started) before raising InfeasibleTrajectoryError. The first rounds
    are deliberately soft so the path can cross the clearance band on its
    way around an obstacle; the later stiff rounds push the equilibrium
    penetration below the margin even when the tracking pull is large.
    """
    obs = _obstacle_array(obstacles)
    chi0_arr = chi0.as_array()
    ref_arr = chi_ref.as_array()
    d_eff = config.d_min + config.clearance_margin
    controls = np.zeros((config.horizon, 2))

    weight = config.penalty_weight
    for _ in range(6):
        controls = _descend(controls, chi0_arr, ref_arr, obs, d_eff, weight, config)
        states, worst_idx, worst_clear = _replay_and_check(chi0, controls, obstacles, config)
        if worst_clear >= 0.0:
            cost = rollout_cost(chi0, controls, chi_ref, obstacles, config)
            out_states = tuple(states)
            out_controls = tuple(ControlInput(v, om) for v, om in controls)
            return RefinedTrajectory(out_states, out_controls, cost)
        if not obstacles:
            break
        weight *= 10.0
    raise InfeasibleTrajectoryError(worst_idx, worst_clear)


@njit(cache=True)
def _descend_kernel(
    controls, chi0, ref, q, r, obs, d_min, weight, dt,
    v_max, omega_max, step_size, max_iterations, tol,
):
    """Projected gradient descent with adaptive step and backtracking.

    The step regrows after every accepted iteration so a single deep
    backtracking episode cannot permanently shrink it; convergence needs
    several consecutive sub-tolerance improvements, which makes the stop
    criterion insensitive to one unlucky step.
    """
    h = controls.shape[0]
    cost, grad = _cost_and_grad(chi0, controls, ref, q, r, obs, d_min, weight, dt)
    step = step_size
    stall = 0
    trial = np.empty_like(controls)
    for _ in range(max_iterations):
        accepted = False
        trial_cost = cost
        for _ in range(60):
            for i in range(h):
                trial[i, 0] = min(max(controls[i, 0] - step * grad[i, 0], -v_max), v_max)
                trial[i, 1] = min(
                    max(controls[i, 1] - step * grad[i, 1], -omega_max), omega_max
                )
            trial_cost = _cost(chi0, trial, ref, q, r, obs, d_min, weight, dt)
            if trial_cost <= cost:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        rel_change = (cost - trial_cost) / max(abs(cost), 1e-30)
        controls[:] = trial
        cost = trial_cost
        step = min(step * 2.0, step_size * 1e4)
        if rel_change < tol:
            stall += 1
            if stall >= 10:
                break
        else:
            stall = 0
        cost, grad = _cost_and_grad(chi0, controls, ref, q, r, obs, d_min, weight, dt)
    return controls


def _descend(controls, chi0_arr, ref_arr, obs, d_eff, weight, config: MpcConfig):
    return _descend_kernel(
        controls.copy(),
        chi0_arr,
        ref_arr,
        config.q,
        config.r,
        obs,
        d_eff,
        weight,
        config.dt,
        config.v_max,
        config.omega_max,
        config.step_size,
        config.max_iterations,
        config.convergence_tol,
    )


def _replay_and_check(chi0: ToolState, controls: np.ndarray, obstacles, config: MpcConfig):
    """Replay controls through the public dynamics and find the worst clearance."""
    states = [chi0]
    for v, om in controls:
        states.append(dynamics_step(states[-1], ControlInput(float(v), float(om)), config.dt))
    worst_idx = 0
    worst = math.inf
    for i, s in enumerate(states):
        c = clearance(s, obstacles, config.d_min)
        if c < worst:
            worst = c
            worst_idx = i
    return states, worst_idx, worst
