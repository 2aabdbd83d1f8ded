"""
Domain models for simulation, rendering and the VLM selection protocol.
"""

from __future__ import annotations

from dataclasses import dataclass
import math
from typing import TYPE_CHECKING, Literal

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field, field_validator

from ..core.exceptions import InvalidConfigError, InvariantViolationError

if TYPE_CHECKING:
    from ..core.config import Settings

FloatArray = NDArray[np.float64]

# Distinct BGR colors assigned to candidates in label order.
DEFAULT_COLORS: tuple[tuple[int, int, int], ...] = (
    (0, 0, 255),
    (255, 128, 0),
    (0, 200, 0),
    (255, 0, 255),
    (0, 215, 255),
    (255, 255, 0),
    (128, 0, 128),
    (0, 128, 255),
)


@dataclass(frozen=True)
class BicycleState:
    """Kinematic bicycle state: position (m), heading (rad), speed (m/s)."""

    x: float
    y: float
    heading: float
    speed: float

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (self.x, self.y, self.heading, self.speed)):
            raise InvariantViolationError("Bicycle state must be finite")
        if self.speed < 0.0:
            raise InvariantViolationError("Bicycle speed must be non-negative", speed=self.speed)

    def as_array(self) -> FloatArray:
        return np.array([self.x, self.y, self.heading, self.speed], dtype=np.float64)


@dataclass(frozen=True, eq=False)
class LqrConfig:
    """
    Tracking controller configuration.

    Attributes:
        wheelbase: Bicycle wheelbase (m)
        dt: Control step (s)
        Q: 4×4 symmetric PSD state-error weight
        R: 2×2 symmetric PD control weight (accel, steer)
        steer_limit: Steering bound (rad)
        accel_min, accel_max: Acceleration bounds (m/s²)
        feasibility_tolerance: Max position error of a feasible track (m)
    """

    wheelbase: float = 2.7
    dt: float = 0.1
    Q: FloatArray = None  # type: ignore[assignment]
    R: FloatArray = None  # type: ignore[assignment]
    steer_limit: float = 0.6
    accel_min: float = -6.0
    accel_max: float = 4.0
    feasibility_tolerance: float = 1.0

    def __post_init__(self) -> None:
        Q = np.diag([1.0, 1.0, 0.5, 0.5]) if self.Q is None else np.array(self.Q, dtype=np.float64)
        R = np.diag([0.1, 0.1]) if self.R is None else np.array(self.R, dtype=np.float64)
        if Q.shape != (4, 4) or R.shape != (2, 2):
            raise InvalidConfigError("Q must be 4x4 and R 2x2", q=Q.shape, r=R.shape)
        if not (np.allclose(Q, Q.T, atol=1e-12) and np.allclose(R, R.T, atol=1e-12)):
            raise InvalidConfigError("Q and R must be symmetric")
        if np.linalg.eigvalsh(Q).min() < -1e-12:
            raise InvalidConfigError("Q must be positive semi-definite")
        if np.linalg.eigvalsh(R).min() <= 0.0:
            raise InvalidConfigError("R must be positive definite")
        if self.dt <= 0.0 or self.wheelbase <= 0.0 or self.steer_limit <= 0.0:
            raise InvalidConfigError("dt, wheelbase and steer_limit must be positive")
        if not self.accel_min < 0.0 < self.accel_max:
            raise InvalidConfigError("Acceleration limits must bracket zero")
        Q.setflags(write=False)
        R.setflags(write=False)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)

    @property
    def max_curvature(self) -> float:
        """Curvature reachable at full steering lock (1/m)."""
        return math.tan(self.steer_limit) / self.wheelbase

    @classmethod
    def from_settings(cls, cfg: Settings) -> LqrConfig:
        return cls(
            wheelbase=cfg.vehicle.wheelbase,
            dt=cfg.planning.dt,
            Q=np.diag(cfg.lqr.q_diag),
            R=np.diag(cfg.lqr.r_diag),
            steer_limit=cfg.lqr.steer_limit,
            accel_min=cfg.lqr.accel_min,
            accel_max=cfg.lqr.accel_max,
            feasibility_tolerance=cfg.lqr.feasibility_tolerance,
        )


class RenderConfig(BaseModel):
    """
    Overlay rasteriser configuration.

    The image size comes from the stage's CameraModel.
    """

    model_config = ConfigDict(frozen=True)

    colors: list[tuple[int, int, int]] = Field(default_factory=lambda: list(DEFAULT_COLORS), min_length=1)
    line_width: int = Field(default=3, ge=1)
    label_scale: float = Field(default=0.8, gt=0.0)

    @field_validator("colors")
    @classmethod
    def validate_distinct(cls, v: list[tuple[int, int, int]]) -> list[tuple[int, int, int]]:
        if len(set(v)) != len(v):
            raise ValueError("candidate colors must be distinct")
        return v


class VlmEndpointConfig(BaseModel):
    """Chat-completions endpoint used for selection and directive queries."""

    model_config = ConfigDict(frozen=True)

    base_url: str = "http://127.0.0.1:8765"
    model_name: str = "mock-vlm"
    timeout: float = Field(default=30.0, gt=0.0)
    max_retries: int = Field(default=2, ge=0)
    backoff_base: float = Field(default=0.5, ge=0.0)
    temperature: Literal[0] = 0
    api_key: str | None = None

    @classmethod
    def from_settings(cls, cfg: Settings) -> VlmEndpointConfig:
        return cls(
            base_url=cfg.effective_vlm_endpoint,
            model_name=cfg.vlm.model_name,
            timeout=cfg.vlm.timeout,
            max_retries=cfg.vlm.max_retries,
            backoff_base=cfg.vlm.backoff_base,
            api_key=cfg.effective_vlm_api_key,
        )


class SelectionResponse(BaseModel):
    """A parsed VLM choice."""

    model_config = ConfigDict(frozen=True)

    chosen_label: str = Field(..., min_length=1, max_length=1)
    raw_text: str


class FewShotExemplar(BaseModel):
    """One worked example shown to the VLM before the real question."""

    model_config = ConfigDict(frozen=True)

    user: str = Field(..., min_length=1)
    assistant: str = Field(..., min_length=1)
