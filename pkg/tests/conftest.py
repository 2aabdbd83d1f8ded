"""
Pytest configuration and fixtures.

Provides shared fixtures and configuration for all tests.
"""

from __future__ import annotations

from collections.abc import Callable, Generator
import os
from pathlib import Path
import tempfile

import pytest
import yaml

from tests.helpers import straight_history, straight_road
from vsf_planner.core.config import Settings
from vsf_planner.domain.models import EgoState, Scenario, ScenarioStage, Trajectory
from vsf_planner.services.vocabulary import candidate_set

DATA_DIR = Path(__file__).parent / "data"
GOLDEN_DIR = DATA_DIR / "golden"
REGRESSION_FILE = DATA_DIR / "regression.yaml"

# Set to rewrite golden files and regression values instead of comparing.
UPDATE_ENV = "VSF_UPDATE_GOLDEN"


@pytest.fixture
def temp_dir() -> Generator[Path, None, None]:
    """Create a temporary directory for tests."""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


@pytest.fixture
def test_settings() -> Settings:
    """Settings with a small vocabulary so scoring stays fast."""
    return Settings(
        environment="testing",
        log_level="DEBUG",
        vocabulary={
            "curvature_count": 5,
            "accel_grid": [-3.0, 0.0, 2.0],
            "switch_time": None,
            "anchor_seed_count": 2,
        },
    )


@pytest.fixture
def straight_scenario() -> Scenario:
    """Empty straight road with the ego at 10 m/s."""
    return Scenario(
        id="straight-0000",
        ego=EgoState(speed=10.0),
        ego_history=straight_history(10.0),
        map=straight_road(),
    )


@pytest.fixture
def straight_stage(straight_scenario: Scenario) -> ScenarioStage:
    """Stage 1 of the straight scenario."""
    return straight_scenario.stage(1)


@pytest.fixture
def small_candidates(straight_stage: ScenarioStage, test_settings: Settings) -> list[Trajectory]:
    """Fifteen vocabulary trajectories for the straight stage."""
    return candidate_set(straight_stage.ego, test_settings, rng_seed=0, include_anchors=False)


@pytest.fixture
def golden() -> Callable[[str, bytes], None]:
    """
    Compare bytes with a checked-in golden file.

    A missing file is recorded from the first run; later runs must match it
    byte for byte.
    """

    def check(name: str, data: bytes) -> None:
        path = GOLDEN_DIR / name
        if os.environ.get(UPDATE_ENV) or not path.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(data)
            return
        assert data == path.read_bytes(), f"{name} no longer matches {path}"

    return check


@pytest.fixture
def regression_value() -> Callable[[str, float, float], float]:
    """
    Compare a number with its frozen value in ``tests/data/regression.yaml``.

    Unknown keys are frozen from the first run. Returns the frozen value.
    """

    def check(key: str, value: float, tolerance: float) -> float:
        frozen = yaml.safe_load(REGRESSION_FILE.read_text(encoding="utf-8")) if REGRESSION_FILE.exists() else None
        frozen = frozen or {}
        if os.environ.get(UPDATE_ENV) or key not in frozen:
            frozen[key] = round(float(value), 6)
            REGRESSION_FILE.parent.mkdir(parents=True, exist_ok=True)
            REGRESSION_FILE.write_text(yaml.safe_dump(frozen, sort_keys=True), encoding="utf-8")
            return float(frozen[key])
        assert value == pytest.approx(frozen[key], abs=tolerance), key
        return float(frozen[key])

    return check
