"""
Unit tests for trajectory utilities.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from tests.helpers import arc, straight_history, straight_line
from vsf_planner.core.exceptions import InvalidParamsError
from vsf_planner.domain.models import Trajectory
from vsf_planner.services.trajectory import (
    arc_length,
    heading_from_positions,
    history_prefix,
    resample_trajectory,
    step_curvature,
    transform_trajectory,
    with_history,
)


class TestResample:
    """Tests for resample_trajectory."""

    def test_same_step_is_identity(self) -> None:
        """Test that resampling at the current step returns the input."""
        traj = straight_line(3.0)
        assert resample_trajectory(traj, 0.1) is traj

    def test_coarser_step_keeps_knots(self) -> None:
        """Test that every other sample is reproduced exactly."""
        traj = arc(0.05, 5.0)
        coarse = resample_trajectory(traj, 0.2)

        assert coarse.n == 21
        np.testing.assert_array_equal(coarse.states, traj.states[::2])

    def test_finer_step_interpolates(self) -> None:
        """Test midpoint interpolation on a straight line."""
        fine = resample_trajectory(straight_line(2.0), 0.05)

        assert fine.n == 81
        assert fine.x[1] == pytest.approx(0.1)
        assert fine.states[-1, 0] == pytest.approx(8.0)

    def test_non_dividing_step_stops_inside_horizon(self) -> None:
        """Test that the output ends at the last whole multiple of the step."""
        resampled = resample_trajectory(straight_line(1.0), 0.3)

        assert resampled.n == 14
        assert resampled.horizon == pytest.approx(3.9)
        assert resampled.horizon <= 4.0
        assert resampled.states[-1, 0] == pytest.approx(3.9)
        assert 4.0 not in resampled.states[:, 0].round(9)

    def test_heading_interpolates_across_seam(self) -> None:
        """Test that headings near ±π take the short arc."""
        states = np.array([[0.0, 0.0, 3.1, 1.0], [0.1, 0.0, -3.1, 1.0]])
        mid = resample_trajectory(Trajectory(states=states, dt=1.0), 0.5).heading[1]
        assert abs(mid) == pytest.approx(math.pi, abs=1e-9)

    def test_rejects_non_positive_step(self) -> None:
        """Test parameter validation."""
        with pytest.raises(InvalidParamsError):
            resample_trajectory(straight_line(1.0), 0.0)


class TestTransform:
    """Tests for rigid transforms."""

    def test_rotation_then_translation(self) -> None:
        """Test a quarter turn followed by a shift."""
        moved = transform_trajectory(straight_line(1.0), 1.0, 2.0, math.pi / 2)

        assert moved.x[-1] == pytest.approx(1.0)
        assert moved.y[-1] == pytest.approx(6.0)
        assert moved.heading[0] == pytest.approx(math.pi / 2)

    def test_preserves_arc_length(self) -> None:
        """Test that rigid motions keep lengths."""
        traj = arc(0.1, 5.0)
        moved = transform_trajectory(traj, -3.0, 7.0, 2.5)
        assert arc_length(moved) == pytest.approx(arc_length(traj))


class TestKinematics:
    """Tests for curvature and heading estimates."""

    def test_curvature_exact_on_arcs(self) -> None:
        """Test that the tangent-circle estimate recovers κ."""
        np.testing.assert_allclose(step_curvature(arc(0.08, 5.0)), 0.08, rtol=1e-9)

    def test_curvature_of_stationary_steps(self) -> None:
        """Test that zero-length steps count as straight."""
        traj = Trajectory(states=np.zeros((5, 4)), dt=0.1)
        np.testing.assert_array_equal(step_curvature(traj), np.zeros(4))

    def test_heading_held_through_stops(self) -> None:
        """Test that zero-length segments keep the previous heading."""
        xy = np.array([[0.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
        headings = heading_from_positions(xy, 0.3)
        np.testing.assert_allclose(headings, [0.3, math.pi / 2, math.pi / 2])


class TestHistory:
    """Tests for history concatenation."""

    def test_prefix_excludes_hand_off(self) -> None:
        """Test that the t=0 sample is not part of the prefix."""
        past = history_prefix(straight_history(5.0), 0.1)

        assert past.shape == (10, 4)
        assert past[0, 0] == pytest.approx(-5.0)
        assert past[-1, 0] == pytest.approx(-0.5)

    def test_with_history_spans_both(self) -> None:
        """Test the joined trajectory's timing."""
        joined = with_history(straight_history(5.0), straight_line(5.0))

        assert joined.n == 51
        assert joined.t0 == pytest.approx(-1.0)
        np.testing.assert_allclose(np.diff(joined.x), 0.5)
