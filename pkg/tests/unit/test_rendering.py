"""
Unit tests for the front-view overlay renderer.
"""

from __future__ import annotations

from collections.abc import Callable

import numpy as np
from pydantic import ValidationError
import pytest

from tests.helpers import arc, moving_agent, straight_line
from vsf_planner.core.exceptions import EmptyCandidatesError, InvalidConfigError, NoVisiblePointsError
from vsf_planner.domain.control import DEFAULT_COLORS, RenderConfig
from vsf_planner.domain.models import CameraModel, ScenarioStage, Trajectory
from vsf_planner.services.rendering import (
    ROAD_COLOR,
    SKY_COLOR,
    encode_ppm,
    project_point,
    render_overlay,
)


def _behind() -> Trajectory:
    t = np.arange(41) * 0.1
    states = np.zeros((41, 4))
    states[:, 0] = -5.0 - 5.0 * t
    states[:, 2] = np.pi
    states[:, 3] = 5.0
    return Trajectory(states=states, dt=0.1)


class TestProjection:
    """Tests for the pinhole projection."""

    def test_optical_axis(self) -> None:
        """Test that a point at camera height straight ahead hits the principal point."""
        assert project_point((10.0, 0.0, 1.5), CameraModel()) == pytest.approx((320.0, 240.0))

    def test_left_and_ground(self) -> None:
        """Test the sign conventions for left and down."""
        u, _ = project_point((10.0, 1.0, 1.5), CameraModel())
        _, v = project_point((10.0, 0.0, 0.0), CameraModel())
        assert u == pytest.approx(270.0)
        assert v == pytest.approx(315.0)

    def test_behind_camera(self) -> None:
        """Test that points behind the near plane are not projected."""
        assert project_point((-5.0, 0.0, 0.0), CameraModel()) is None


class TestRenderOverlay:
    """Tests for overlay rendering."""

    def test_deterministic(self, straight_stage: ScenarioStage) -> None:
        """Test that repeated renders are byte-identical."""
        candidates = [("A", straight_line(10.0)), ("B", straight_line(10.0, y=1.0))]
        first = encode_ppm(render_overlay(straight_stage, candidates))
        second = encode_ppm(render_overlay(straight_stage, candidates))
        assert first == second

    def test_matches_golden_files(self, straight_stage: ScenarioStage, golden: Callable[[str, bytes], None]) -> None:
        """Test byte equality with the checked-in overlays."""
        candidates = [("A", straight_line(10.0)), ("B", arc(0.05, 8.0)), ("C", straight_line(6.0, y=3.5))]
        golden("overlay_straight.ppm", encode_ppm(render_overlay(straight_stage, candidates)))

        agents = [moving_agent("lead", 18.0, speed=4.0), moving_agent("left", 9.0, y0=3.5)]
        busy = straight_stage.model_copy(update={"agents": agents})
        golden("overlay_agents.ppm", encode_ppm(render_overlay(busy, candidates[:2])))

    def test_image_layout(self, straight_stage: ScenarioStage) -> None:
        """Test size, sky, road and candidate color."""
        image = render_overlay(straight_stage, [("A", straight_line(10.0))])

        assert image.shape == (480, 640, 3)
        assert image.dtype == np.uint8
        assert tuple(image[0, 320]) == SKY_COLOR
        assert tuple(image[479, 200]) == ROAD_COLOR
        assert np.any(np.all(image == np.array(DEFAULT_COLORS[0], dtype=np.uint8), axis=-1))

    def test_ppm_encoding(self, straight_stage: ScenarioStage) -> None:
        """Test the binary PPM container."""
        data = encode_ppm(render_overlay(straight_stage, [("A", straight_line(10.0))]))
        assert data.startswith(b"P6")
        assert len(data) > 640 * 480 * 3

    def test_no_visible_points(self, straight_stage: ScenarioStage) -> None:
        """Test that a path entirely behind the camera is an error."""
        with pytest.raises(NoVisiblePointsError):
            render_overlay(straight_stage, [("A", _behind())])

    def test_empty(self, straight_stage: ScenarioStage) -> None:
        """Test that at least one candidate is needed."""
        with pytest.raises(EmptyCandidatesError):
            render_overlay(straight_stage, [])

    def test_too_many_candidates(self, straight_stage: ScenarioStage) -> None:
        """Test that each candidate needs its own color."""
        candidates = [(chr(65 + i), straight_line(10.0)) for i in range(9)]
        with pytest.raises(InvalidConfigError):
            render_overlay(straight_stage, candidates)


class TestRenderConfig:
    """Tests for renderer configuration."""

    def test_colors_distinct(self) -> None:
        """Test that duplicate colors are rejected."""
        with pytest.raises(ValidationError):
            RenderConfig(colors=[(0, 0, 255), (0, 0, 255)])
