"""
Unit tests for LQR tracking on the kinematic bicycle.
"""

from __future__ import annotations

import math

import numpy as np
import pytest
import scipy.linalg

from tests.helpers import arc, straight_line
from vsf_planner.core.config import Settings
from vsf_planner.core.exceptions import HorizonMismatchError, InvalidConfigError
from vsf_planner.domain.control import BicycleState, LqrConfig
from vsf_planner.domain.models import Trajectory
from vsf_planner.services.lqr import (
    bicycle_step,
    initial_state,
    linearize,
    open_loop_rollout,
    reference_controls,
    riccati_recursion,
    track_trajectory,
    tracking_cost,
)


def _model_trajectory(cfg: LqrConfig, accel: float, steer: float, steps: int = 40) -> Trajectory:
    states = np.zeros((steps + 1, 4))
    states[0] = (0.0, 0.0, 0.0, 6.0)
    for t in range(steps):
        states[t + 1] = bicycle_step(states[t], np.array([accel, steer]), cfg)
    return Trajectory(states=states, dt=cfg.dt)


class TestBicycleModel:
    """Tests for the model and its Jacobians."""

    def test_straight_step(self) -> None:
        """Test a step without controls."""
        nxt = bicycle_step(np.array([0.0, 0.0, 0.0, 10.0]), np.zeros(2), LqrConfig())
        np.testing.assert_allclose(nxt, [1.0, 0.0, 0.0, 10.0])

    def test_jacobians_match_finite_differences(self) -> None:
        """Test A and B against central differences."""
        cfg = LqrConfig()
        state = BicycleState(1.0, -2.0, 0.3, 5.0)
        control = (0.5, 0.1)
        A, B = linearize(state, control, cfg)

        eps = 1e-6
        x0, u0 = state.as_array(), np.array(control)
        for j in range(4):
            d = np.zeros(4)
            d[j] = eps
            col = (bicycle_step(x0 + d, u0, cfg) - bicycle_step(x0 - d, u0, cfg)) / (2 * eps)
            np.testing.assert_allclose(A[:, j], col, atol=1e-7)
        for j in range(2):
            d = np.zeros(2)
            d[j] = eps
            col = (bicycle_step(x0, u0 + d, cfg) - bicycle_step(x0, u0 - d, cfg)) / (2 * eps)
            np.testing.assert_allclose(B[:, j], col, atol=1e-7)


class TestRiccati:
    """Tests for the backward recursion."""

    def test_converges_to_stationary_solution(self) -> None:
        """Test that a long constant-system recursion reaches the algebraic Riccati solution."""
        cfg = LqrConfig()
        A, B = linearize(BicycleState(0.0, 0.0, 0.0, 5.0), (0.0, 0.0), cfg)
        _, P = riccati_recursion([A] * 1000, [B] * 1000, cfg.Q, cfg.R)
        expected = scipy.linalg.solve_discrete_are(A, B, cfg.Q, cfg.R)
        np.testing.assert_allclose(P[0], expected, rtol=1e-6, atol=1e-8)

    def test_terminal_cost(self) -> None:
        """Test that the last cost-to-go equals Q and every step is symmetric."""
        cfg = LqrConfig()
        A, B = linearize(BicycleState(0.0, 0.0, 0.0, 5.0), (0.0, 0.0), cfg)
        K, P = riccati_recursion([A] * 5, [B] * 5, cfg.Q, cfg.R)
        assert K.shape == (5, 2, 4)
        np.testing.assert_array_equal(P[-1], cfg.Q)
        for p in P:
            np.testing.assert_array_equal(p, p.T)


class TestTracking:
    """Tests for closed-loop tracking."""

    def test_model_consistent_reference_is_exact(self) -> None:
        """Test zero error on a trajectory generated by the model itself."""
        cfg = LqrConfig()
        candidate = _model_trajectory(cfg, accel=0.5, steer=0.05)
        result = track_trajectory(candidate, initial_state(candidate), cfg)

        assert result.max_pos_err < 1e-9
        assert result.feasible
        np.testing.assert_allclose(result.controls[:, 0], 0.5, atol=1e-9)
        np.testing.assert_allclose(result.controls[:, 1], 0.05, atol=1e-9)
        assert tracking_cost(result, candidate, cfg) < 1e-12

    def test_reference_controls(self) -> None:
        """Test the inverse model on a straight line."""
        controls = reference_controls(straight_line(10.0), LqrConfig())
        assert controls.shape == (40, 2)
        np.testing.assert_allclose(controls, 0.0, atol=1e-12)

    def test_feedback_removes_offset(self) -> None:
        """Test that feedback pulls a displaced start back onto the line."""
        cfg = LqrConfig()
        candidate = straight_line(10.0)
        start = BicycleState(0.0, 0.5, 0.0, 10.0)

        closed = track_trajectory(candidate, start, cfg)
        opened = open_loop_rollout(candidate, start, cfg)

        assert abs(closed.simulated.y[-1]) < 0.25
        assert opened.simulated.y[-1] == pytest.approx(0.5)
        assert tracking_cost(closed, candidate, cfg) < tracking_cost(opened, candidate, cfg)

    def test_limits_respected(self) -> None:
        """Test that steering and acceleration stay inside the limits."""
        cfg = LqrConfig()
        candidate = arc(0.5, 5.0)
        result = track_trajectory(candidate, initial_state(candidate), cfg)

        assert np.all(np.abs(result.controls[:, 1]) <= cfg.steer_limit + 1e-12)
        assert np.all(result.controls[:, 0] >= cfg.accel_min - 1e-12)
        assert np.all(result.controls[:, 0] <= cfg.accel_max + 1e-12)
        assert not result.feasible
        assert result.diagnostics["max_pos_err"] == result.max_pos_err

    def test_speed_stays_non_negative(self) -> None:
        """Test that braking to a stop never reverses."""
        cfg = LqrConfig()
        states = np.zeros((41, 4))
        states[:, 3] = np.maximum(2.0 - 3.0 * np.arange(41) * 0.1, 0.0)
        states[1:, 0] = np.cumsum(states[:-1, 3] * 0.1)
        candidate = Trajectory(states=states, dt=0.1)
        result = track_trajectory(candidate, BicycleState(0.0, 0.0, 0.0, 2.5), cfg)
        assert result.simulated.speed.min() >= 0.0

    def test_step_mismatch(self) -> None:
        """Test that the candidate step must match the controller."""
        with pytest.raises(HorizonMismatchError):
            track_trajectory(straight_line(5.0, dt=0.2), BicycleState(0.0, 0.0, 0.0, 5.0), LqrConfig())


class TestLqrConfig:
    """Tests for controller configuration."""

    def test_from_settings(self) -> None:
        """Test that settings feed the controller."""
        cfg = LqrConfig.from_settings(Settings(vehicle={"wheelbase": 3.0}, lqr={"steer_limit": 0.5}))
        assert cfg.wheelbase == 3.0
        assert cfg.max_curvature == pytest.approx(math.tan(0.5) / 3.0)

    def test_rejects_asymmetric_q(self) -> None:
        """Test the symmetry requirement."""
        q = np.eye(4)
        q[0, 1] = 1.0
        with pytest.raises(InvalidConfigError):
            LqrConfig(Q=q)

    def test_rejects_singular_r(self) -> None:
        """Test that R must be positive definite."""
        with pytest.raises(InvalidConfigError):
            LqrConfig(R=np.diag([1.0, 0.0]))
