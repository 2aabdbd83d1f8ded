"""
Unit tests for candidate generation.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from vsf_planner.core.config import Settings
from vsf_planner.core.exceptions import InvalidParamsError
from vsf_planner.domain.models import AnchorParams, EgoState, Pose2D, SecondPhase, VocabularyParams
from vsf_planner.services.trajectory import step_curvature
from vsf_planner.services.vocabulary import candidate_set, generate_anchors, generate_vocabulary


def _params(**overrides: object) -> VocabularyParams:
    data: dict[str, object] = {"curvature_grid": [-0.1, 0.0, 0.1], "accel_grid": [-2.0, 0.0, 2.0]}
    data.update(overrides)
    return VocabularyParams(**data)


class TestGenerateVocabulary:
    """Tests for the kinematic grid."""

    def test_count_and_order(self) -> None:
        """Test one trajectory per grid combination, curvature-major."""
        vocab = generate_vocabulary(EgoState(speed=5.0), _params())

        assert len(vocab) == 9
        assert all(t.n == 41 for t in vocab)
        # Index 3..5 share curvature 0 and so stay on the x axis.
        for traj in vocab[3:6]:
            np.testing.assert_allclose(traj.y, 0.0, atol=1e-12)

    def test_straight_constant_speed(self) -> None:
        """Test κ=0, a=0 reproduces a constant-speed line."""
        traj = generate_vocabulary(EgoState(speed=5.0), _params(curvature_grid=[0.0], accel_grid=[0.0]))[0]

        np.testing.assert_allclose(traj.x, 5.0 * traj.times)
        np.testing.assert_allclose(traj.speed, 5.0)

    def test_constant_curvature_is_exact(self) -> None:
        """Test that integrated arcs have the commanded curvature."""
        traj = generate_vocabulary(EgoState(speed=5.0), _params(curvature_grid=[0.15], accel_grid=[0.0]))[0]
        np.testing.assert_allclose(step_curvature(traj), 0.15, rtol=1e-9)
        assert traj.heading[-1] == pytest.approx(0.15 * 5.0 * 4.0)

    def test_speed_clipped(self) -> None:
        """Test that speed stays in [0, v_max] and distance stops growing at rest."""
        vocab = generate_vocabulary(EgoState(speed=2.0), _params(curvature_grid=[0.0], accel_grid=[-2.0, 5.0], v_max=10.0))
        braking, speeding = vocab

        assert braking.speed.min() == 0.0
        assert braking.x[-1] == pytest.approx(1.0)
        assert speeding.speed.max() == pytest.approx(10.0)
        # 2 → 10 m/s takes 1.6 s (9.6 m), then 2.4 s at 10 m/s.
        assert speeding.x[-1] == pytest.approx(9.6 + 24.0)

    def test_starts_at_ego_pose(self) -> None:
        """Test that rollouts begin at the ego pose and heading."""
        ego = EgoState(pose=Pose2D(x=3.0, y=-1.0, heading=math.pi / 2), speed=4.0)
        for traj in generate_vocabulary(ego, _params()):
            assert traj.states[0, 0] == 3.0
            assert traj.states[0, 1] == -1.0
            assert traj.heading[0] == pytest.approx(math.pi / 2)

    def test_second_phase(self) -> None:
        """Test that the curvature switches at switch_time."""
        params = _params(
            curvature_grid=[0.0],
            accel_grid=[0.0],
            second_phase=SecondPhase(switch_time=2.0, curvature_grid=[0.0, 0.1]),
        )
        straight, turning = generate_vocabulary(EgoState(speed=5.0), params)
        kappa = step_curvature(turning)

        np.testing.assert_allclose(kappa[:20], 0.0, atol=1e-12)
        np.testing.assert_allclose(kappa[20:], 0.1, rtol=1e-9)
        np.testing.assert_allclose(straight.y, 0.0, atol=1e-12)

    def test_invalid_grids(self) -> None:
        """Test that empty or out-of-bound grids are rejected."""
        with pytest.raises(InvalidParamsError):
            generate_vocabulary(EgoState(speed=5.0), _params(accel_grid=[]))
        with pytest.raises(InvalidParamsError):
            generate_vocabulary(EgoState(speed=5.0), _params(curvature_grid=[0.5]))


class TestGenerateAnchors:
    """Tests for perturbation anchors."""

    def _seeds(self) -> list:
        return generate_vocabulary(EgoState(speed=8.0), _params())[::4]

    def test_count_and_determinism(self) -> None:
        """Test seed-major counts and reproducibility."""
        seeds = self._seeds()
        params = AnchorParams(seed_count=3, rng_seed=42)
        first = generate_anchors(EgoState(speed=8.0), seeds, params)
        second = generate_anchors(EgoState(speed=8.0), seeds, params)

        assert len(first) == len(seeds) * 3
        assert all(a == b for a, b in zip(first, second, strict=True))

    def test_seed_changes_output(self) -> None:
        """Test that another rng seed gives other anchors."""
        seeds = self._seeds()
        a = generate_anchors(EgoState(speed=8.0), seeds, AnchorParams(rng_seed=1))
        b = generate_anchors(EgoState(speed=8.0), seeds, AnchorParams(rng_seed=2))
        assert any(x != y for x, y in zip(a, b, strict=True))

    def test_zero_noise_reproduces_seed(self) -> None:
        """Test that zero offsets return the seeds unchanged."""
        seeds = self._seeds()
        anchors = generate_anchors(
            EgoState(speed=8.0), seeds, AnchorParams(seed_count=2, noise_scale_lon=0.0, noise_scale_lat=0.0)
        )
        assert anchors[0] is seeds[0]
        assert anchors[-1] is seeds[-1]

    def test_curvature_bound_and_start(self) -> None:
        """Test that anchors respect κ_max and keep the seed start."""
        seeds = self._seeds()
        params = AnchorParams(seed_count=5, noise_scale_lon=5.0, noise_scale_lat=3.0, rng_seed=7, curvature_max=0.2)
        for i, anchor in enumerate(generate_anchors(EgoState(speed=8.0), seeds, params)):
            seed = seeds[i // 5]
            assert np.max(np.abs(step_curvature(anchor))) <= 0.2 + 1e-6
            np.testing.assert_array_equal(anchor.xy[0], seed.xy[0])

    def test_no_seeds(self) -> None:
        """Test that an empty seed list is rejected."""
        with pytest.raises(InvalidParamsError):
            generate_anchors(EgoState(speed=8.0), [], AnchorParams())


class TestCandidateSet:
    """Tests for the combined candidate set."""

    def test_vocabulary_plus_anchors(self, test_settings: Settings) -> None:
        """Test sizes with and without anchors."""
        ego = EgoState(speed=10.0)
        plain = candidate_set(ego, test_settings, rng_seed=0, include_anchors=False)
        full = candidate_set(ego, test_settings, rng_seed=0)

        assert len(plain) == 15
        assert len(full) == 15 + 8 * 2
        assert all(a == b for a, b in zip(plain, full[:15], strict=True))
