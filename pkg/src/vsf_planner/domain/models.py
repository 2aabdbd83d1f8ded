"""
Domain models for scenarios and trajectories.

Defines the planning-frame data structures with:
- Strict validation of every domain invariant at construction
- Immutability (scenario data never changes after load)
- A numpy-backed Trajectory that pydantic models embed transparently

All quantities use the ego-local frame at t=0 (x forward, y left), meters,
seconds and radians.
"""

from __future__ import annotations

from collections.abc import Iterator, Sequence
from dataclasses import dataclass
from enum import Enum
import math
from typing import TYPE_CHECKING, Any

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    GetCoreSchemaHandler,
    ValidationError,
    field_validator,
    model_validator,
)
from pydantic_core import CoreSchema, core_schema
from shapely.geometry import Polygon

from ..core.exceptions import DataError, EmptyTrajectoryError, InvalidParamsError, InvariantViolationError

if TYPE_CHECKING:
    from ..core.config import Settings

FloatArray = NDArray[np.float64]
Point2 = tuple[float, float]

# Column layout of Trajectory.states
X, Y, HEADING, SPEED = 0, 1, 2, 3

# Tolerance for "uniform spacing" checks on timestamps read from files.
TIME_TOLERANCE = 1e-6


def wrap_angle(angle: ArrayLike) -> Any:
    """
    Normalize angles to (-π, π].

    Values already inside the interval are returned bit-for-bit unchanged, so
    wrapping is idempotent.

    Args:
        angle: Scalar or array of radians

    Returns:
        Wrapped value(s) with the input's shape (float for scalars)
    """
    a = np.asarray(angle, dtype=np.float64)
    inside = (a > -math.pi) & (a <= math.pi)
    wrapped = np.where(inside, a, math.pi - np.mod(math.pi - a, 2.0 * math.pi))
    if wrapped.ndim == 0:
        return float(wrapped)
    return wrapped


class Command(str, Enum):
    """High-level navigation command given to the ego."""

    LEFT = "Left"
    FORWARD = "Forward"
    RIGHT = "Right"


class LightState(str, Enum):
    """Traffic light phase."""

    RED = "Red"
    YELLOW = "Yellow"
    GREEN = "Green"


class Pose2D(BaseModel):
    """
    Planar pose.

    Attributes:
        x: Forward coordinate in meters
        y: Left coordinate in meters
        heading: Yaw in radians, normalized to (-π, π]
    """

    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    x: float = Field(..., description="Forward coordinate (m)")
    y: float = Field(..., description="Left coordinate (m)")
    heading: float = Field(default=0.0, description="Yaw (rad) in (-π, π]")

    @field_validator("heading")
    @classmethod
    def normalize_heading(cls, v: float) -> float:
        """Wrap heading into (-π, π]."""
        return float(wrap_angle(v))


class TrajectorySample(BaseModel):
    """One timestamped pose plus speed."""

    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    t: float = Field(..., description="Time (s)")
    pose: Pose2D
    speed: float = Field(..., ge=0.0, description="Speed (m/s)")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """
    Uniformly sampled trajectory backed by a read-only ``(N, 4)`` array.

    Columns are ``[x, y, heading, speed]``; sample ``i`` sits at time
    ``t0 + i * dt``. Headings are wrapped to (-π, π] on construction.

    Attributes:
        states: Float64 state array, one row per sample
        dt: Sample step in seconds
        t0: Time of the first sample in seconds
    """

    states: FloatArray
    dt: float
    t0: float = 0.0

    def __post_init__(self) -> None:
        states = np.array(self.states, dtype=np.float64, copy=True)
        if states.ndim != 2 or states.shape[1] != 4:
            raise InvariantViolationError("Trajectory states must have shape (N, 4)", shape=states.shape)
        if states.shape[0] == 0:
            raise EmptyTrajectoryError("Trajectory has no samples")
        if not (math.isfinite(self.dt) and self.dt > 0.0):
            raise InvariantViolationError("Trajectory dt must be positive", field="dt", dt=self.dt)
        if not math.isfinite(self.t0):
            raise InvariantViolationError("Trajectory t0 must be finite", field="t0")
        if not np.all(np.isfinite(states)):
            raise InvariantViolationError("Trajectory contains non-finite values", field="samples")
        if np.any(states[:, SPEED] < 0.0):
            raise InvariantViolationError("Trajectory speed must be non-negative", field="speed")
        states[:, HEADING] = wrap_angle(states[:, HEADING])
        states.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "t0", float(self.t0))

    # ── Construction ────────────────────────────────────────────────────────
    @classmethod
    def from_samples(cls, samples: Sequence[TrajectorySample], dt: float | None = None) -> Trajectory:
        """
        Build a trajectory from explicit samples.

        Args:
            samples: Samples with strictly increasing, uniformly spaced times
            dt: Expected step; inferred from the first two samples when None

        Raises:
            EmptyTrajectoryError: If no samples are given
            InvariantViolationError: If spacing is not uniform
        """
        if not samples:
            raise EmptyTrajectoryError("Trajectory has no samples")
        times = np.array([s.t for s in samples], dtype=np.float64)
        if dt is None:
            if len(samples) < 2:
                raise InvariantViolationError("Single-sample trajectory needs an explicit dt", field="dt")
            dt = float(times[1] - times[0])
        if dt <= 0.0:
            raise InvariantViolationError("Timestamps must be strictly increasing", field="samples.t")
        expected = times[0] + np.arange(len(samples)) * dt
        if np.any(np.diff(times) <= 0.0) or np.max(np.abs(times - expected)) > TIME_TOLERANCE:
            raise InvariantViolationError("Timestamps must be uniformly spaced by dt", field="samples.t", dt=dt)
        states = np.array(
            [[s.pose.x, s.pose.y, s.pose.heading, s.speed] for s in samples],
            dtype=np.float64,
        )
        return cls(states=states, dt=dt, t0=float(times[0]))

    # ── Views ───────────────────────────────────────────────────────────────
    @property
    def n(self) -> int:
        """Number of samples."""
        return int(self.states.shape[0])

    @property
    def horizon(self) -> float:
        """Time spanned by the samples."""
        return (self.n - 1) * self.dt

    @property
    def times(self) -> FloatArray:
        """Sample timestamps."""
        return self.t0 + np.arange(self.n, dtype=np.float64) * self.dt

    @property
    def x(self) -> FloatArray:
        return self.states[:, X]

    @property
    def y(self) -> FloatArray:
        return self.states[:, Y]

    @property
    def xy(self) -> FloatArray:
        return self.states[:, :2]

    @property
    def heading(self) -> FloatArray:
        return self.states[:, HEADING]

    @property
    def speed(self) -> FloatArray:
        return self.states[:, SPEED]

    @property
    def samples(self) -> list[TrajectorySample]:
        """Explicit (t, pose, speed) view of the trajectory."""
        return [
            TrajectorySample(
                t=float(t),
                pose=Pose2D(x=float(row[X]), y=float(row[Y]), heading=float(row[HEADING])),
                speed=float(row[SPEED]),
            )
            for t, row in zip(self.times, self.states, strict=True)
        ]

    def __iter__(self) -> Iterator[TrajectorySample]:
        return iter(self.samples)

    def __len__(self) -> int:
        return self.n

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return self.dt == other.dt and self.t0 == other.t0 and np.array_equal(self.states, other.states)

    __hash__ = None  # type: ignore[assignment]

    def to_dict(self) -> dict[str, Any]:
        """Serialize to the file schema (``dt``, ``horizon``, ``samples``)."""
        return {
            "dt": self.dt,
            "horizon": self.horizon,
            "samples": [
                {
                    "t": float(t),
                    "pose": {"x": float(row[X]), "y": float(row[Y]), "heading": float(row[HEADING])},
                    "speed": float(row[SPEED]),
                }
                for t, row in zip(self.times, self.states, strict=True)
            ],
        }

    @classmethod
    def from_dict(cls, data: Any) -> Trajectory:
        """
        Parse the file schema.

        Raises:
            InvariantViolationError: On structural or invariant problems
        """
        if isinstance(data, Trajectory):
            return data
        if not isinstance(data, dict) or "samples" not in data:
            raise InvariantViolationError("Trajectory must be a mapping with 'samples'", field="samples")
        try:
            samples = [TrajectorySample.model_validate(s) for s in data["samples"]]
        except ValidationError as e:
            raise InvariantViolationError("Invalid trajectory sample", field="samples", error=str(e)) from e
        traj = cls.from_samples(samples, dt=data.get("dt"))
        horizon = data.get("horizon")
        if horizon is not None and abs(float(horizon) - traj.horizon) > TIME_TOLERANCE:
            raise InvariantViolationError(
                "Sample count does not match horizon/dt + 1",
                field="horizon",
                horizon=horizon,
                samples=traj.n,
            )
        return traj

    @classmethod
    def __get_pydantic_core_schema__(cls, source_type: Any, handler: GetCoreSchemaHandler) -> CoreSchema:
        """Embed trajectories in pydantic models using the file schema."""

        def validate(value: Any) -> Trajectory:
            try:
                return cls.from_dict(value)
            except DataError as e:
                raise ValueError(str(e)) from e

        return core_schema.no_info_plain_validator_function(
            validate,
            serialization=core_schema.plain_serializer_function_ser_schema(lambda traj: traj.to_dict()),
        )


class EgoState(BaseModel):
    """
    Ego vehicle state at t=0.

    Attributes:
        pose: Ego pose (the planning-frame origin for generated scenarios)
        speed: Current speed (m/s)
        accel: Current longitudinal acceleration (m/s²)
        command: Navigation command
    """

    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    pose: Pose2D = Field(default_factory=lambda: Pose2D(x=0.0, y=0.0, heading=0.0))
    speed: float = Field(..., ge=0.0, description="Speed (m/s)")
    accel: float = Field(default=0.0, description="Acceleration (m/s²)")
    command: Command = Field(default=Command.FORWARD)


class Agent(BaseModel):
    """
    Another road user with a time-parameterized track.

    Attributes:
        id: Agent identifier
        length: Box length (m)
        width: Box width (m)
        track: Samples with strictly increasing timestamps
    """

    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    id: str = Field(..., min_length=1)
    length: float = Field(..., gt=0.0)
    width: float = Field(..., gt=0.0)
    track: list[TrajectorySample] = Field(..., min_length=1)

    @field_validator("track")
    @classmethod
    def validate_track_order(cls, v: list[TrajectorySample]) -> list[TrajectorySample]:
        """Ensure timestamps strictly increase."""
        times = [s.t for s in v]
        if any(b <= a for a, b in zip(times, times[1:], strict=False)):
            raise ValueError("agent track timestamps must be strictly increasing")
        return v

    def covers(self, t_start: float, t_end: float) -> bool:
        """Check that the track spans ``[t_start, t_end]``."""
        return self.track[0].t <= t_start + TIME_TOLERANCE and self.track[-1].t >= t_end - TIME_TOLERANCE

    def states_at(self, times: ArrayLike) -> FloatArray:
        """
        Interpolate the track at arbitrary times.

        Positions and speed are linear; heading follows the shortest arc.
        Outside the track, the end samples are held.

        Args:
            times: Query times (s)

        Returns:
            ``(len(times), 4)`` array of ``[x, y, heading, speed]``
        """
        t = np.asarray(times, dtype=np.float64)
        kt = np.array([s.t for s in self.track])
        kx = np.array([s.pose.x for s in self.track])
        ky = np.array([s.pose.y for s in self.track])
        kh = np.unwrap(np.array([s.pose.heading for s in self.track]))
        kv = np.array([s.speed for s in self.track])
        out = np.empty((t.size, 4), dtype=np.float64)
        out[:, X] = np.interp(t, kt, kx)
        out[:, Y] = np.interp(t, kt, ky)
        out[:, HEADING] = wrap_angle(np.interp(t, kt, kh))
        out[:, SPEED] = np.interp(t, kt, kv)
        return out


class Lane(BaseModel):
    """
    Lane centerline with its travel direction.

    Attributes:
        centerline: Polyline (≥ 2 points)
        direction: Travel heading (rad) of each centerline segment
        half_width: Half of the lane width (m)
    """

    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    centerline: list[Point2] = Field(..., min_length=2)
    direction: list[float] = Field(default_factory=list)
    half_width: float = Field(default=1.75, gt=0.0)

    @model_validator(mode="after")
    def fill_direction(self) -> Lane:
        """Derive segment headings from the centerline when omitted."""
        pts = np.asarray(self.centerline, dtype=np.float64)
        seg = np.diff(pts, axis=0)
        if np.any(np.hypot(seg[:, 0], seg[:, 1]) == 0.0):
            raise ValueError("lane centerline has repeated points")
        if not self.direction:
            self.__dict__["direction"] = [float(h) for h in np.arctan2(seg[:, 1], seg[:, 0])]
        elif len(self.direction) != len(self.centerline) - 1:
            raise ValueError("lane direction needs one heading per centerline segment")
        else:
            self.__dict__["direction"] = [float(wrap_angle(h)) for h in self.direction]
        return self


class LightPhase(BaseModel):
    """Entry of a traffic light state timeline: state holds from ``t`` on."""

    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    t: float
    state: LightState


class TrafficLight(BaseModel):
    """
    Traffic light governing a stop line.

    Attributes:
        stop_line: Segment the ego front must not cross on red
        state_timeline: Phases with strictly increasing start times
    """

    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    stop_line: tuple[Point2, Point2]
    state_timeline: list[LightPhase] = Field(..., min_length=1)

    @field_validator("state_timeline")
    @classmethod
    def validate_timeline(cls, v: list[LightPhase]) -> list[LightPhase]:
        times = [p.t for p in v]
        if any(b <= a for a, b in zip(times, times[1:], strict=False)):
            raise ValueError("state timeline times must be strictly increasing")
        return v

    def state_at(self, t: float) -> LightState:
        """State active at time ``t`` (the first phase before the timeline starts)."""
        state = self.state_timeline[0].state
        for phase in self.state_timeline:
            if phase.t <= t:
                state = phase.state
            else:
                break
        return state


class MapContext(BaseModel):
    """
    Static map context in the planning frame.

    Attributes:
        drivable: Simple CCW polygons whose union is drivable
        lanes: Lane centerlines
        traffic_lights: Stop lines with state timelines
        route: Polyline of the ego's intended path
    """

    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    drivable: list[list[Point2]] = Field(default_factory=list)
    lanes: list[Lane] = Field(default_factory=list)
    traffic_lights: list[TrafficLight] = Field(default_factory=list)
    route: list[Point2] = Field(..., min_length=2)

    @field_validator("drivable")
    @classmethod
    def validate_polygons(cls, v: list[list[Point2]]) -> list[list[Point2]]:
        """Require simple, counter-clockwise polygons."""
        for i, ring in enumerate(v):
            if len(ring) < 3:
                raise ValueError(f"drivable polygon {i} needs at least 3 vertices")
            poly = Polygon(ring)
            if not poly.is_valid or poly.area <= 0.0:
                raise ValueError(f"drivable polygon {i} is not simple")
            if not poly.exterior.is_ccw:
                raise ValueError(f"drivable polygon {i} is not counter-clockwise")
        return v


class CameraExtrinsic(BaseModel):
    """Camera pose in the ego frame (meters, radians)."""

    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    position: tuple[float, float, float] = (0.0, 0.0, 1.5)
    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0


class CameraModel(BaseModel):
    """
    Pinhole front camera.

    Attributes:
        fx, fy: Focal lengths (px)
        cx, cy: Principal point (px)
        width, height: Image size (px)
        extrinsic: Camera pose in the ego frame
    """

    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    fx: float = Field(default=500.0, gt=0.0)
    fy: float = Field(default=500.0, gt=0.0)
    cx: float = 320.0
    cy: float = 240.0
    width: int = Field(default=640, gt=0)
    height: int = Field(default=480, gt=0)
    extrinsic: CameraExtrinsic = Field(default_factory=CameraExtrinsic)

    @model_validator(mode="after")
    def validate_principal_point(self) -> CameraModel:
        if not (0.0 < self.cx < self.width and 0.0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        return self


class Stage2Override(BaseModel):
    """Fields replaced for the second evaluation stage; absent fields fall back to stage 1."""

    model_config = ConfigDict(frozen=True)

    ego: EgoState | None = None
    ego_history: Trajectory | None = None
    agents: list[Agent] | None = None
    map: MapContext | None = None


class ScenarioStage(BaseModel):
    """
    Everything a metric, scorer or directive provider sees for one stage.

    Attributes:
        scenario_id: Owning scenario
        stage_index: 1 or 2
    """

    model_config = ConfigDict(frozen=True)

    scenario_id: str
    stage_index: int = Field(default=1, ge=1, le=2)
    ego: EgoState
    ego_history: Trajectory
    agents: list[Agent] = Field(default_factory=list)
    map: MapContext
    camera: CameraModel = Field(default_factory=CameraModel)


class Scenario(BaseModel):
    """
    A driving scenario with an optional perturbed second stage.

    Attributes:
        id: Identifier, unique within a file
        ego: Ego state at t=0
        ego_history: Past ego trajectory ending at t=0
        agents: Other road users
        map: Map context
        camera: Front camera
        stage2: Optional second-stage override bundle
    """

    model_config = ConfigDict(frozen=True)

    id: str = Field(..., min_length=1)
    ego: EgoState
    ego_history: Trajectory
    agents: list[Agent] = Field(default_factory=list)
    map: MapContext
    camera: CameraModel = Field(default_factory=CameraModel)
    stage2: Stage2Override | None = None

    @property
    def has_stage2(self) -> bool:
        return self.stage2 is not None

    def stage(self, index: int = 1) -> ScenarioStage:
        """
        Resolve the view of one evaluation stage.

        Raises:
            InvariantViolationError: If stage 2 is requested but absent
        """
        if index == 1:
            return ScenarioStage(
                scenario_id=self.id,
                stage_index=1,
                ego=self.ego,
                ego_history=self.ego_history,
                agents=self.agents,
                map=self.map,
                camera=self.camera,
            )
        if index != 2 or self.stage2 is None:
            raise InvariantViolationError("Scenario has no such stage", scenario=self.id, stage=index)
        s2 = self.stage2
        return ScenarioStage(
            scenario_id=self.id,
            stage_index=2,
            ego=s2.ego if s2.ego is not None else self.ego,
            ego_history=s2.ego_history if s2.ego_history is not None else self.ego_history,
            agents=s2.agents if s2.agents is not None else self.agents,
            map=s2.map if s2.map is not None else self.map,
            camera=self.camera,
        )

    def stages(self) -> list[ScenarioStage]:
        """All stages in order."""
        return [self.stage(1), self.stage(2)] if self.has_stage2 else [self.stage(1)]


# ═══════════════════════════════════════════════════════════════════════════
# Candidate generation parameters
# ═══════════════════════════════════════════════════════════════════════════
class SecondPhase(BaseModel):
    """Curvature switch applied from ``switch_time`` on."""

    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    switch_time: float
    curvature_grid: list[float]


class VocabularyParams(BaseModel):
    """
    Grid of the kinematic vocabulary.

    Attributes:
        curvature_grid: First-phase curvatures (1/m)
        accel_grid: Constant accelerations (m/s²)
        second_phase: Optional curvature switch
        v_max: Speed cap (m/s)
        horizon, dt: Sampling (s)
        curvature_max: Bound every curvature must respect (1/m)
    """

    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    curvature_grid: list[float]
    accel_grid: list[float]
    second_phase: SecondPhase | None = None
    v_max: float = 15.0
    horizon: float = 4.0
    dt: float = 0.1
    curvature_max: float = 0.2

    def check(self) -> None:
        """
        Validate grid contents.

        Raises:
            InvalidParamsError: If a grid is empty or out of range
        """
        if not self.curvature_grid or not self.accel_grid:
            raise InvalidParamsError("Curvature and acceleration grids must be non-empty")
        if self.dt <= 0.0 or self.horizon <= 0.0 or self.v_max <= 0.0 or self.curvature_max <= 0.0:
            raise InvalidParamsError("dt, horizon, v_max and curvature_max must be positive")
        steps = self.horizon / self.dt
        if abs(steps - round(steps)) > 1e-9:
            raise InvalidParamsError("Horizon must be a multiple of dt", horizon=self.horizon, dt=self.dt)
        curvatures = list(self.curvature_grid)
        if self.second_phase is not None:
            if not self.second_phase.curvature_grid:
                raise InvalidParamsError("Second-phase curvature grid must be non-empty")
            if not 0.0 <= self.second_phase.switch_time <= self.horizon:
                raise InvalidParamsError("Switch time must lie within the horizon", switch_time=self.second_phase.switch_time)
            curvatures += self.second_phase.curvature_grid
        worst = max(abs(k) for k in curvatures)
        if worst > self.curvature_max:
            raise InvalidParamsError("Curvature exceeds the configured bound", curvature=worst, bound=self.curvature_max)

    @classmethod
    def from_settings(cls, cfg: Settings) -> VocabularyParams:
        """Default grids from the ``vocabulary`` and ``planning`` sections."""
        voc = cfg.vocabulary
        grid = np.linspace(-voc.curvature_max, voc.curvature_max, voc.curvature_count) if voc.curvature_count > 1 else np.zeros(1)
        second = (
            SecondPhase(switch_time=voc.switch_time, curvature_grid=list(voc.second_phase_grid))
            if voc.switch_time is not None and voc.second_phase_grid
            else None
        )
        return cls(
            curvature_grid=[float(k) for k in grid],
            accel_grid=list(voc.accel_grid),
            second_phase=second,
            v_max=voc.v_max,
            horizon=cfg.planning.horizon,
            dt=cfg.planning.dt,
            curvature_max=voc.curvature_max,
        )


class AnchorParams(BaseModel):
    """
    Seeded perturbation anchors.

    Attributes:
        seed_count: Perturbed copies per seed trajectory
        noise_scale_lon, noise_scale_lat: Endpoint offset standard deviations (m)
        rng_seed: 64-bit seed
        curvature_max: Bound enforced by offset halving (1/m)
        max_halvings: Halvings tried before falling back to the seed
    """

    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    seed_count: int = 4
    noise_scale_lon: float = 2.0
    noise_scale_lat: float = 0.75
    rng_seed: int = 0
    curvature_max: float = 0.2
    max_halvings: int = 8

    def check(self) -> None:
        """
        Raises:
            InvalidParamsError: On out-of-range values
        """
        if self.seed_count < 1:
            raise InvalidParamsError("seed_count must be at least 1", seed_count=self.seed_count)
        if self.noise_scale_lon < 0.0 or self.noise_scale_lat < 0.0:
            raise InvalidParamsError("Noise scales must be non-negative")
        if not 0 <= self.rng_seed < 2**64:
            raise InvalidParamsError("rng_seed must be an unsigned 64-bit integer", rng_seed=self.rng_seed)
        if self.max_halvings < 0:
            raise InvalidParamsError("max_halvings must be non-negative")

    @classmethod
    def from_settings(cls, cfg: Settings, rng_seed: int | None = None) -> AnchorParams:
        voc = cfg.vocabulary
        return cls(
            seed_count=voc.anchor_seed_count,
            noise_scale_lon=voc.anchor_noise_lon,
            noise_scale_lat=voc.anchor_noise_lat,
            rng_seed=cfg.seed if rng_seed is None else rng_seed,
            curvature_max=voc.curvature_max,
        )
