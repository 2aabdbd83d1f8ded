"""
Core configuration management using Pydantic V2 Settings.

This module provides type-safe, validated configuration management with support for:
- Environment variables (prefix ``VSF_``, nested sections via ``__``)
- .env file loading
- YAML configuration files (``--config <path>``)
- Runtime validation
"""

from __future__ import annotations

from functools import lru_cache
from pathlib import Path
from typing import Any, Literal

from pydantic import AliasChoices, BaseModel, Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict
import yaml

from .exceptions import InvalidConfigError, MalformedFileError


class PlanningSettings(BaseModel):
    """Planning horizon and sample step shared by generators, metrics and the simulator."""

    horizon: float = Field(default=4.0, gt=0.0, description="Planning horizon in seconds")
    dt: float = Field(default=0.1, gt=0.0, description="Trajectory sample step in seconds")

    @property
    def steps(self) -> int:
        """Number of integration steps (samples minus one)."""
        return round(self.horizon / self.dt)


class VehicleSettings(BaseModel):
    """Ego footprint and kinematic wheelbase."""

    length: float = Field(default=4.6, gt=0.0, description="Ego footprint length in meters")
    width: float = Field(default=1.9, gt=0.0, description="Ego footprint width in meters")
    wheelbase: float = Field(default=2.7, gt=0.0, description="Bicycle-model wheelbase in meters")


class MetricSettings(BaseModel):
    """Every threshold used by the EPDMS sub-metrics, in one block."""

    stationary_speed: float = Field(default=0.1, ge=0.0, description="Ego speed below which an impact is not at fault")
    rear_sector_deg: float = Field(default=120.0, gt=0.0, le=360.0, description="Width of the ego rear sector excusing impacts")
    ddc_max_opposed_distance: float = Field(default=2.0, gt=0.0, description="Allowed travel against the lane direction (m)")
    ttc_horizon: float = Field(default=1.0, gt=0.0, description="Constant-velocity look-ahead for TTC (s)")
    lk_max_deviation: float = Field(default=0.5, gt=0.0, description="Lateral deviation from the lane centerline (m)")
    lk_max_duration: float = Field(default=1.0, gt=0.0, description="Allowed continuous deviation time (s)")
    hc_max_lon_accel: float = Field(default=4.0, gt=0.0)
    hc_max_lat_accel: float = Field(default=4.9, gt=0.0)
    ec_max_jerk: float = Field(default=8.0, gt=0.0)
    ec_max_yaw_rate: float = Field(default=0.95, gt=0.0)
    ec_max_yaw_accel: float = Field(default=1.9, gt=0.0)


class DirectiveSettings(BaseModel):
    """Rule-based directive provider and embedding defaults."""

    speed_limit: float = Field(default=15.0, gt=0.0, description="Road speed limit (m/s)")
    accelerate_ratio: float = Field(default=0.8, gt=0.0, le=1.0)
    comfortable_decel: float = Field(default=3.0, gt=0.0, description="Deceleration for stopping distance (m/s²)")
    stopping_margin: float = Field(default=2.0, ge=0.0, description="Buffer added to the stopping distance (m)")
    blocking_lateral_margin: float = Field(default=1.5, ge=0.0, description="Half-width of the ego corridor (m)")
    embedding_dim: int = Field(default=16, ge=1)
    embedding_seed: int = Field(default=20250101)


class VocabularySettings(BaseModel):
    """Default grids for the kinematic vocabulary and perturbation anchors."""

    curvature_max: float = Field(default=0.2, gt=0.0, description="κ_max in 1/m")
    curvature_count: int = Field(default=25, ge=1)
    accel_grid: list[float] = Field(default_factory=lambda: [-5.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0])
    switch_time: float | None = Field(default=2.0, ge=0.0)
    second_phase_grid: list[float] = Field(default_factory=lambda: [-0.1, -0.05, 0.0, 0.05, 0.1])
    v_max: float = Field(default=15.0, gt=0.0)
    anchor_seed_count: int = Field(default=4, ge=1)
    anchor_noise_lon: float = Field(default=2.0, ge=0.0)
    anchor_noise_lat: float = Field(default=0.75, ge=0.0)


class LqrSettings(BaseModel):
    """Tracking controller defaults."""

    q_diag: list[float] = Field(default_factory=lambda: [1.0, 1.0, 0.5, 0.5], min_length=4, max_length=4)
    r_diag: list[float] = Field(default_factory=lambda: [0.1, 0.1], min_length=2, max_length=2)
    steer_limit: float = Field(default=0.6, gt=0.0)
    accel_min: float = Field(default=-6.0, lt=0.0)
    accel_max: float = Field(default=4.0, gt=0.0)
    feasibility_tolerance: float = Field(default=1.0, gt=0.0, description="Max position error for a feasible track (m)")


class RenderSettings(BaseModel):
    """Overlay rasteriser defaults."""

    line_width: int = Field(default=3, ge=1)
    label_scale: float = Field(default=0.8, gt=0.0)


class VlmSettings(BaseModel):
    """VLM endpoint used by the VLM fusioner and the remote directive provider."""

    endpoint: str = Field(default="http://127.0.0.1:8765", description="Base URL of the chat-completions server")
    api_key: str | None = Field(default=None, description="Bearer token sent when set")
    model_name: str = Field(default="mock-vlm")
    timeout: float = Field(default=30.0, gt=0.0)
    max_retries: int = Field(default=2, ge=0)
    backoff_base: float = Field(default=0.5, ge=0.0)
    max_in_flight: int = Field(default=4, ge=1)


class Settings(BaseSettings):
    """
    Application-wide configuration with environment variable support.

    All settings can be overridden via environment variables, a .env file, or a
    YAML file passed with ``--config``.
    """

    model_config = SettingsConfigDict(
        env_prefix="VSF_",
        env_nested_delimiter="__",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
        populate_by_name=True,
    )

    # ═══════════════════════════════════════════════════════════════════════
    # Application Configuration
    # ═══════════════════════════════════════════════════════════════════════
    app_name: str = Field(default="VSF Planner", description="Application display name")

    app_version: str = Field(default="1.0.0", description="Application version")

    environment: Literal["development", "production", "testing"] = Field(
        default="development",
        description="Runtime environment",
    )

    seed: int = Field(default=0, ge=0, lt=2**64, description="Global RNG seed")

    jobs: int = Field(default=1, ge=1, le=64, description="Scenario worker pool size")

    # ═══════════════════════════════════════════════════════════════════════
    # Engine Configuration
    # ═══════════════════════════════════════════════════════════════════════
    planning: PlanningSettings = Field(default_factory=PlanningSettings)
    vehicle: VehicleSettings = Field(default_factory=VehicleSettings)
    metrics: MetricSettings = Field(default_factory=MetricSettings)
    directive: DirectiveSettings = Field(default_factory=DirectiveSettings)
    vocabulary: VocabularySettings = Field(default_factory=VocabularySettings)
    lqr: LqrSettings = Field(default_factory=LqrSettings)
    render: RenderSettings = Field(default_factory=RenderSettings)
    vlm: VlmSettings = Field(default_factory=VlmSettings)

    # Flat aliases for the documented endpoint variables.
    vlm_endpoint: str | None = Field(
        default=None,
        validation_alias=AliasChoices("vlm_endpoint", "VSF_VLM_ENDPOINT"),
    )
    vlm_api_key: str | None = Field(
        default=None,
        validation_alias=AliasChoices("vlm_api_key", "VSF_VLM_API_KEY"),
    )

    # ═══════════════════════════════════════════════════════════════════════
    # Logging Configuration
    # ═══════════════════════════════════════════════════════════════════════
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"] = Field(
        default="INFO",
        description="Logging level",
    )

    log_format: Literal["json", "console"] = Field(
        default="console",
        description="Log output format",
    )

    log_file: Path | None = Field(
        default=None,
        description="Optional log file path",
    )

    # ═══════════════════════════════════════════════════════════════════════
    # Validators
    # ═══════════════════════════════════════════════════════════════════════
    @field_validator("log_level", mode="before")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        """Ensure log level is uppercase."""
        return v.upper() if isinstance(v, str) else v

    # ═══════════════════════════════════════════════════════════════════════
    # Helper Methods
    # ═══════════════════════════════════════════════════════════════════════
    @property
    def is_production(self) -> bool:
        """Check if running in production environment."""
        return self.environment == "production"

    @property
    def is_development(self) -> bool:
        """Check if running in development environment."""
        return self.environment == "development"

    @property
    def effective_vlm_endpoint(self) -> str:
        """Endpoint from ``VSF_VLM_ENDPOINT`` when set, else the ``vlm`` section."""
        return (self.vlm_endpoint or self.vlm.endpoint).rstrip("/")

    @property
    def effective_vlm_api_key(self) -> str | None:
        """API key from ``VSF_VLM_API_KEY`` when set, else the ``vlm`` section."""
        return self.vlm_api_key or self.vlm.api_key


def load_settings(config_path: Path | None = None, **overrides: Any) -> Settings:
    """
    Build settings from an optional YAML file plus keyword overrides.

    Args:
        config_path: YAML file whose keys mirror the settings tree
        **overrides: Highest-priority values (CLI flags)

    Returns:
        Validated settings

    Raises:
        MalformedFileError: If the YAML cannot be parsed
        InvalidConfigError: If values fail validation
    """
    data: dict[str, Any] = {}
    if config_path is not None:
        try:
            loaded = yaml.safe_load(config_path.read_text(encoding="utf-8"))
        except (OSError, yaml.YAMLError) as e:
            raise MalformedFileError("Cannot read config file", path=str(config_path), error=str(e)) from e
        if loaded is not None and not isinstance(loaded, dict):
            raise MalformedFileError("Config file must contain a mapping", path=str(config_path))
        data.update(loaded or {})
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return Settings(**data)
    except ValueError as e:
        raise InvalidConfigError("Invalid configuration", error=str(e)) from e


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """
    Get cached application settings instance.

    Returns:
        Settings: Singleton settings object
    """
    return Settings()


# Convenience export
settings: Settings = get_settings()
