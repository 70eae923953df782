"""Unicycle dynamics, clearance, rollout cost/gradient, and refinement."""

import math

import numpy as np
import pytest

from herdplan.geometry import Point2, Segment
from herdplan.mpc import (
    ControlInput,
    InfeasibleTrajectoryError,
    MpcConfig,
    RefinedTrajectory,
    ToolState,
    clearance,
    cost_gradient,
    dynamics_step,
    refine,
    rollout_cost,
    wrap_angle,
)

GATE_WALLS = (
    Segment(Point2(0.0, 0.15), Point2(0.48, 0.15)),
    Segment(Point2(0.72, 0.15), Point2(1.2, 0.15)),
)
FLOOR = (Segment(Point2(0.0, 0.0), Point2(1.0, 0.0)),)


def fd_gradient(chi0, controls, ref, obstacles, cfg, h=1e-6):
    """Central-difference gradient of rollout_cost, one entry at a time."""
    grad = np.zeros_like(controls)
    for i in range(controls.shape[0]):
        for j in range(2):
            up = controls.copy()
            up[i, j] += h
            dn = controls.copy()
            dn[i, j] -= h
            grad[i, j] = (
                rollout_cost(chi0, up, ref, obstacles, cfg)
                - rollout_cost(chi0, dn, ref, obstacles, cfg)
            ) / (2 * h)
    return grad


def random_instance(rng, with_obstacles: bool):
    horizon = int(rng.integers(1, 11))
    cfg = MpcConfig(
        horizon=horizon,
        q=np.diag(rng.uniform(0.5, 10.0, size=3)),
        r=np.diag(rng.uniform(0.2, 3.0, size=2)),
        d_min=float(rng.uniform(0.02, 0.08)),
        penalty_weight=float(rng.uniform(1.0, 50.0)),
    )
    chi0 = ToolState(*rng.uniform(0.1, 0.9, size=2), float(rng.uniform(-2.5, 2.5)))
    ref = ToolState(*rng.uniform(0.1, 0.9, size=2), float(rng.uniform(-2.5, 2.5)))
    controls = rng.uniform(-1.0, 1.0, size=(horizon, 2)) * np.array([0.5, 2.0])
    obstacles = GATE_WALLS if with_obstacles else ()
    return chi0, controls, ref, obstacles, cfg


class TestWrapAngle:
    def test_identity_inside_band(self):
        assert wrap_angle(0.7) == pytest.approx(0.7, abs=1e-15)
        assert wrap_angle(0.0) == 0.0

    def test_wraps_past_pi(self):
        assert wrap_angle(math.pi + 0.1) == pytest.approx(-math.pi + 0.1, abs=1e-12)
        assert wrap_angle(2 * math.pi) == pytest.approx(0.0, abs=1e-12)
        assert wrap_angle(3 * math.pi) == pytest.approx(math.pi, abs=1e-12)

    def test_negative_angles(self):
        assert wrap_angle(-math.pi - 0.1) == pytest.approx(math.pi - 0.1, abs=1e-12)


class TestToolState:
    def test_theta_is_wrapped_on_construction(self):
        assert ToolState(0.0, 0.0, 2 * math.pi).theta == pytest.approx(0.0, abs=1e-12)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            ToolState(math.nan, 0.0, 0.0)
        with pytest.raises(ValueError):
            ToolState(0.0, math.inf, 0.0)

    def test_array_and_position(self):
        chi = ToolState(0.3, 0.4, 0.5)
        assert np.allclose(chi.as_array(), [0.3, 0.4, 0.5])
        assert chi.position() == Point2(0.3, 0.4)


class TestDynamicsStep:
    def test_drive_straight(self):
        nxt = dynamics_step(ToolState(0, 0, 0), ControlInput(1.0, 0.0), 0.1)
        assert (nxt.x, nxt.y, nxt.theta) == pytest.approx((0.1, 0.0, 0.0), abs=1e-15)

    def test_drive_along_heading(self):
        nxt = dynamics_step(ToolState(0, 0, math.pi / 2), ControlInput(1.0, 0.0), 0.1)
        assert nxt.x == pytest.approx(0.0, abs=1e-15)
        assert nxt.y == pytest.approx(0.1, abs=1e-15)

    def test_pure_rotation(self):
        nxt = dynamics_step(ToolState(0, 0, 0), ControlInput(0.0, 1.0), 0.1)
        assert (nxt.x, nxt.y) == (0.0, 0.0)
        assert nxt.theta == pytest.approx(0.1, abs=1e-15)

    def test_combined_motion(self):
        nxt = dynamics_step(ToolState(1, 1, math.pi), ControlInput(2.0, -1.0), 0.05)
        assert nxt.x == pytest.approx(0.9, abs=1e-12)
        assert nxt.y == pytest.approx(1.0, abs=1e-12)
        assert nxt.theta == pytest.approx(math.pi - 0.05, abs=1e-12)


class TestClearance:
    def test_no_obstacles_is_infinite(self):
        assert clearance(ToolState(0.5, 0.5, 0.0), (), 0.05) == math.inf

    def test_above_wall(self):
        assert clearance(ToolState(0.5, 0.1, 0.0), FLOOR, 0.04) == pytest.approx(0.06)

    def test_on_wall_is_minus_d_min(self):
        assert clearance(ToolState(0.5, 0.0, 0.0), FLOOR, 0.04) == pytest.approx(-0.04)

    def test_beyond_endpoint_measures_to_endpoint(self):
        assert clearance(ToolState(1.3, 0.0, 0.0), FLOOR, 0.04) == pytest.approx(0.26)

    def test_nearest_of_several(self):
        assert clearance(ToolState(0.6, 0.25, 0.0), GATE_WALLS, 0.04) == pytest.approx(
            math.hypot(0.12, 0.10) - 0.04
        )


class TestRolloutCost:
    def test_zero_at_reference_with_zero_controls(self):
        chi = ToolState(0.4, 0.4, 0.3)
        cfg = MpcConfig(horizon=5)
        assert rollout_cost(chi, np.zeros((5, 2)), chi, (), cfg) == 0.0

    def test_single_stage_tracking_error(self):
        cfg = MpcConfig(horizon=1, q=np.eye(3), r=np.eye(2))
        J = rollout_cost(
            ToolState(1, 0, 0), np.zeros((1, 2)), ToolState(0, 0, 0), (), cfg
        )
        assert J == pytest.approx(1.0, rel=1e-12)

    def test_control_effort_term(self):
        cfg = MpcConfig(horizon=1, q=np.eye(3), r=np.diag([2.0, 3.0]))
        chi = ToolState(0, 0, 0)
        J = rollout_cost(chi, np.array([[0.5, -1.0]]), chi, (), cfg)
        assert J == pytest.approx(2 * 0.25 + 3 * 1.0, rel=1e-12)

    def test_clearance_penalty_term(self):
        cfg = MpcConfig(
            horizon=1, q=np.eye(3), r=np.eye(2), d_min=0.05, penalty_weight=10.0
        )
        chi = ToolState(0.5, 0.02, 0.0)
        J = rollout_cost(chi, np.zeros((1, 2)), chi, FLOOR, cfg)
        assert J == pytest.approx(2 * 10.0 * 0.03**2, rel=1e-12)

    def test_penalty_weight_irrelevant_when_clear(self, rng):
        chi0, controls, ref, _, cfg = random_instance(rng, with_obstacles=False)
        chi0 = ToolState(chi0.x, chi0.y + 2.0, chi0.theta)  # far above the walls
        ref = ToolState(ref.x, ref.y + 2.0, ref.theta)
        soft = rollout_cost(chi0, controls, ref, GATE_WALLS, cfg)
        stiff_cfg = MpcConfig(
            horizon=cfg.horizon, q=cfg.q, r=cfg.r, d_min=cfg.d_min,
            penalty_weight=cfg.penalty_weight * 2,
        )
        assert rollout_cost(chi0, controls, ref, GATE_WALLS, stiff_cfg) == soft

    def test_wrong_control_count_rejected(self):
        cfg = MpcConfig(horizon=4)
        with pytest.raises(ValueError):
            rollout_cost(
                ToolState(0, 0, 0), np.zeros((3, 2)), ToolState(0, 0, 0), (), cfg
            )


class TestCostGradient:
    def test_zero_at_global_minimum(self):
        chi = ToolState(0.4, 0.4, 0.3)
        cfg = MpcConfig(horizon=6)
        grad = cost_gradient(chi, np.zeros((6, 2)), chi, (), cfg)
        assert np.allclose(grad, 0.0, atol=1e-15)

    def test_shape(self):
        cfg = MpcConfig(horizon=7)
        grad = cost_gradient(
            ToolState(0, 0.5, 0), np.zeros((7, 2)), ToolState(1, 0.5, 0), (), cfg
        )
        assert grad.shape == (7, 2)

    def test_matches_finite_differences(self, rng):
        worst = 0.0
        for i in range(30):
            chi0, controls, ref, obstacles, cfg = random_instance(rng, i % 2 == 0)
            ga = cost_gradient(chi0, controls, ref, obstacles, cfg)
            gfd = fd_gradient(chi0, controls, ref, obstacles, cfg)
            err = np.linalg.norm(ga - gfd) / max(1.0, np.linalg.norm(gfd))
            worst = max(worst, err)
        assert worst <= 1e-4

    def test_inactive_penalty_matches_obstacle_free_gradient(self, rng):
        chi0 = ToolState(0.5, 0.6, 0.2)
        ref = ToolState(0.7, 0.7, 0.0)
        cfg = MpcConfig(horizon=5, d_min=0.04)
        controls = rng.uniform(-0.3, 0.3, size=(5, 2))
        with_walls = cost_gradient(chi0, controls, ref, GATE_WALLS, cfg)
        without = cost_gradient(chi0, controls, ref, (), cfg)
        assert np.allclose(with_walls, without, atol=1e-15)


class TestRefine:
    def test_free_space_reaches_reference(self):
        traj = refine(ToolState(0.2, 0.2, 0.0), ToolState(0.7, 0.2, 0.0), (), MpcConfig())
        err = math.hypot(traj.states[-1].x - 0.7, traj.states[-1].y - 0.2)
        assert err <= 1e-4

    def test_already_at_reference_keeps_zero_controls(self):
        chi = ToolState(0.3, 0.3, 0.5)
        traj = refine(chi, chi, (), MpcConfig())
        assert traj.cost == 0.0
        assert all(u.v == 0.0 and u.omega == 0.0 for u in traj.controls)

    def test_controls_respect_actuation_box(self):
        cfg = MpcConfig(horizon=20)
        traj = refine(ToolState(0.1, 0.1, 0.0), ToolState(3.0, 2.0, 0.0), (), cfg)
        assert all(abs(u.v) <= cfg.v_max + 1e-12 for u in traj.controls)
        assert all(abs(u.omega) <= cfg.omega_max + 1e-12 for u in traj.controls)

    def test_states_replay_through_dynamics(self):
        cfg = MpcConfig(horizon=15)
        traj = refine(ToolState(0.2, 0.3, 0.1), ToolState(0.6, 0.5, 0.0), (), cfg)
        assert len(traj.states) == cfg.horizon + 1
        assert len(traj.controls) == cfg.horizon
        chi = traj.states[0]
        for u, expected in zip(traj.controls, traj.states[1:]):
            chi = dynamics_step(chi, u, cfg.dt)
            assert (chi.x, chi.y, chi.theta) == (expected.x, expected.y, expected.theta)

    def test_deterministic(self):
        cfg = MpcConfig(horizon=25, d_min=0.04)
        a = refine(ToolState(0.3, 0.4, -0.5), ToolState(0.8, 0.3, 0.0), GATE_WALLS, cfg)
        b = refine(ToolState(0.3, 0.4, -0.5), ToolState(0.8, 0.3, 0.0), GATE_WALLS, cfg)
        assert a.cost == b.cost
        assert all(
            u.v == w.v and u.omega == w.omega for u, w in zip(a.controls, b.controls)
        )

    def test_bends_around_wall_tip_into_gate(self):
        # The straight chord from start to reference cuts the 0.04 safety
        # band around the left wall tip; the refined path must round it and
        # still park within 2 cm of the reference pose.
        cfg = MpcConfig(horizon=50, d_min=0.04, r=np.diag([0.3, 0.3]))
        chi0 = ToolState(0.41, 0.21, -1.2)
        ref = ToolState(0.60, 0.10, -0.5)

        chord = np.linspace([chi0.x, chi0.y], [ref.x, ref.y], 200)
        straight_worst = min(
            clearance(ToolState(x, y, 0.0), GATE_WALLS, cfg.d_min) for x, y in chord
        )
        assert straight_worst < -0.02  # naive path genuinely violates

        traj = refine(chi0, ref, GATE_WALLS, cfg)
        assert traj.min_clearance(GATE_WALLS, cfg.d_min) >= 0.0
        arrival = math.hypot(traj.states[-1].x - ref.x, traj.states[-1].y - ref.y)
        assert arrival <= 0.02

    def test_start_inside_safety_band_is_infeasible(self):
        cfg = MpcConfig(horizon=5, d_min=0.04)
        with pytest.raises(InfeasibleTrajectoryError) as exc_info:
            refine(ToolState(0.5, 0.01, 0.0), ToolState(0.5, 0.3, 0.0), FLOOR, cfg)
        assert exc_info.value.step_index == 0
        assert exc_info.value.clearance_value == pytest.approx(-0.03)
        assert "step 0" in str(exc_info.value)


class TestRefinedTrajectory:
    def test_positions_shape(self):
        traj = refine(ToolState(0.2, 0.2, 0.0), ToolState(0.4, 0.2, 0.0), (), MpcConfig())
        assert traj.positions().shape == (51, 2)
        assert isinstance(traj, RefinedTrajectory)

    def test_min_clearance_over_states(self):
        states = (ToolState(0.5, 0.3, 0.0), ToolState(0.5, 0.1, 0.0))
        traj = RefinedTrajectory(states, (ControlInput(0, 0),), 0.0)
        assert traj.min_clearance(FLOOR, 0.04) == pytest.approx(0.06)


class TestMpcConfigValidation:
    def test_horizon_must_be_positive(self):
        with pytest.raises(ValueError):
            MpcConfig(horizon=0)

    def test_q_shape_checked(self):
        with pytest.raises(ValueError):
            MpcConfig(q=np.eye(2))

    def test_q_must_be_positive_definite(self):
        with pytest.raises(ValueError):
            MpcConfig(q=np.diag([1.0, 1.0, -1.0]))

    def test_q_must_be_symmetric(self):
        q = np.array([[1.0, 0.5, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        with pytest.raises(ValueError):
            MpcConfig(q=q)

    def test_r_must_be_positive_definite(self):
        with pytest.raises(ValueError):
            MpcConfig(r=np.zeros((2, 2)))

    def test_d_min_must_be_positive(self):
        with pytest.raises(ValueError):
            MpcConfig(d_min=0.0)
