"""
Procedural scenario synthesis.

Every scenario is a two-lane road along +x with the ego at the origin in the
right lane (y = 0), a one-second constant-speed history, and a stage-2
variant with perturbed ego speed and agent positions. Each kind adds its
own hazard.
"""

from __future__ import annotations

from enum import Enum
import math

import numpy as np

from ..core.config import Settings, settings
from ..core.exceptions import InvalidParamsError
from ..core.logging import get_logger
from ..domain.models import (
    Agent,
    CameraModel,
    Command,
    EgoState,
    FloatArray,
    Lane,
    LightPhase,
    LightState,
    MapContext,
    Pose2D,
    Scenario,
    Stage2Override,
    TrafficLight,
    Trajectory,
    TrajectorySample,
)

logger = get_logger(__name__)

LANE_WIDTH = 3.5
ROAD_START = -20.0
ROAD_END = 150.0
HISTORY_SECONDS = 1.0
AGENT_LENGTH = 4.5
AGENT_WIDTH = 1.9
CURVE_LENGTH = 60.0


class ScenarioKind(str, Enum):
    """Scenario families."""

    STRAIGHT_CLEAR = "StraightClear"
    LEAD_BRAKE = "LeadBrake"
    RED_LIGHT = "RedLight"
    CURVE_LANE_KEEP = "CurveLaneKeep"
    CROSS_TRAFFIC = "CrossTraffic"


KIND_ORDER: tuple[ScenarioKind, ...] = tuple(ScenarioKind)


# ═══════════════════════════════════════════════════════════════════════════
# Building blocks
# ═══════════════════════════════════════════════════════════════════════════
def _history(speed: float, dt: float) -> Trajectory:
    """Straight constant-speed approach ending at the origin at t = 0."""
    steps = round(HISTORY_SECONDS / dt)
    t = -HISTORY_SECONDS + np.arange(steps + 1) * dt
    states = np.zeros((steps + 1, 4))
    states[:, 0] = speed * t
    states[:, 3] = speed
    return Trajectory(states=states, dt=dt, t0=-HISTORY_SECONDS)


def _track(times: FloatArray, x: FloatArray, y: FloatArray, heading: FloatArray, speed: FloatArray) -> list[TrajectorySample]:
    return [
        TrajectorySample(t=float(t), pose=Pose2D(x=float(px), y=float(py), heading=float(h)), speed=float(max(v, 0.0)))
        for t, px, py, h, v in zip(times, x, y, heading, speed, strict=True)
    ]


def _straight_map(traffic_lights: list[TrafficLight] | None = None) -> MapContext:
    half = LANE_WIDTH / 2.0
    lanes = [
        Lane(centerline=[(ROAD_START, 0.0), (ROAD_END, 0.0)], half_width=half),
        Lane(centerline=[(ROAD_START, LANE_WIDTH), (ROAD_END, LANE_WIDTH)], half_width=half),
    ]
    drivable = [[(ROAD_START, -half), (ROAD_END, -half), (ROAD_END, LANE_WIDTH + half), (ROAD_START, LANE_WIDTH + half)]]
    return MapContext(
        drivable=drivable,
        lanes=lanes,
        traffic_lights=traffic_lights or [],
        route=[(ROAD_START, 0.0), (ROAD_END, 0.0)],
    )


def _curve_map(kappa: float) -> MapContext:
    """Single lane: straight lead-in up to the origin, then a constant-curvature arc."""
    half = LANE_WIDTH / 2.0
    s = np.arange(0.0, CURVE_LENGTH + 1e-9, 1.0)
    heading = kappa * s
    x = np.concatenate([[ROAD_START], np.sin(heading) / kappa])
    y = np.concatenate([[0.0], (1.0 - np.cos(heading)) / kappa])
    heading = np.concatenate([[0.0], heading])
    center = np.stack([x, y], axis=1)
    normal = np.stack([-np.sin(heading), np.cos(heading)], axis=1)
    right = center - half * normal
    left = center + half * normal
    ring = [(float(px), float(py)) for px, py in np.vstack([right, left[::-1]])]
    centerline = [(float(px), float(py)) for px, py in center]
    return MapContext(
        drivable=[ring],
        lanes=[Lane(centerline=centerline, half_width=half)],
        route=centerline,
    )


def _lead_vehicle(rng: np.random.Generator, ego_speed: float, times: FloatArray) -> Agent:
    """Lead car in the ego lane braking hard from a random onset."""
    gap = rng.uniform(15.0, 30.0)
    speed0 = ego_speed * rng.uniform(0.8, 1.0)
    decel = rng.uniform(3.0, 5.0)
    onset = rng.uniform(0.5, 1.5)
    braking = np.clip(times - onset, 0.0, None)
    stop_time = speed0 / decel
    active = np.minimum(braking, stop_time)
    speed = np.where(times < onset, speed0, np.maximum(speed0 - decel * braking, 0.0))
    x = gap + speed0 * np.minimum(times, onset) + speed0 * active - 0.5 * decel * active**2
    zeros = np.zeros_like(times)
    return Agent(id="lead", length=AGENT_LENGTH, width=AGENT_WIDTH, track=_track(times, x, zeros, zeros, speed))


def _crossing_vehicle(rng: np.random.Generator, times: FloatArray) -> Agent:
    """Car crossing the road perpendicular to the ego path."""
    x_cross = rng.uniform(15.0, 30.0)
    speed = rng.uniform(5.0, 10.0)
    direction = 1.0 if rng.uniform() < 0.5 else -1.0
    start = -direction * rng.uniform(15.0, 25.0)
    y = start + direction * speed * times
    heading = np.full_like(times, direction * math.pi / 2.0)
    return Agent(
        id="crossing",
        length=AGENT_LENGTH,
        width=AGENT_WIDTH,
        track=_track(times, np.full_like(times, x_cross), y, heading, np.full_like(times, speed)),
    )


def _shift_agent(agent: Agent, dx: float, dy: float) -> Agent:
    track = [
        s.model_copy(update={"pose": Pose2D(x=s.pose.x + dx, y=s.pose.y + dy, heading=s.pose.heading)})
        for s in agent.track
    ]
    return agent.model_copy(update={"track": track})


# ═══════════════════════════════════════════════════════════════════════════
# Generation
# ═══════════════════════════════════════════════════════════════════════════
def _scenario(kind: ScenarioKind, index: int, rng: np.random.Generator, cfg: Settings) -> Scenario:
    dt = cfg.planning.dt
    times = np.arange(round(cfg.planning.horizon / dt) + 1) * dt
    speed = float(rng.uniform(5.0, 12.0))
    command = Command.FORWARD
    agents: list[Agent] = []
    road = _straight_map()

    if kind is ScenarioKind.LEAD_BRAKE:
        agents.append(_lead_vehicle(rng, speed, times))
    elif kind is ScenarioKind.RED_LIGHT:
        x_line = float(rng.uniform(15.0, 35.0))
        half = LANE_WIDTH / 2.0
        light = TrafficLight(
            stop_line=((x_line, -half), (x_line, LANE_WIDTH + half)),
            state_timeline=[LightPhase(t=0.0, state=LightState.RED)],
        )
        road = _straight_map([light])
    elif kind is ScenarioKind.CURVE_LANE_KEEP:
        kappa = float(rng.uniform(0.02, 0.05)) * (1.0 if rng.uniform() < 0.5 else -1.0)
        road = _curve_map(kappa)
        command = Command.LEFT if kappa > 0.0 else Command.RIGHT
    elif kind is ScenarioKind.CROSS_TRAFFIC:
        agents.append(_crossing_vehicle(rng, times))

    speed2 = speed * float(rng.uniform(0.8, 1.2))
    agents2 = [_shift_agent(a, float(rng.uniform(-2.0, 2.0)), float(rng.uniform(-0.3, 0.3))) for a in agents]
    stage2 = Stage2Override(
        ego=EgoState(speed=speed2, command=command),
        ego_history=_history(speed2, dt),
        agents=agents2,
    )
    return Scenario(
        id=f"{kind.value}-{index:04d}",
        ego=EgoState(speed=speed, command=command),
        ego_history=_history(speed, dt),
        agents=agents,
        map=road,
        camera=CameraModel(),
        stage2=stage2,
    )


def gen_scenarios(kind: ScenarioKind | str, count: int, rng_seed: int, cfg: Settings | None = None) -> list[Scenario]:
    """
    Generate ``count`` scenarios of one kind.

    Scenario ``i`` draws from a generator seeded with ``(rng_seed, kind, i)``,
    so output is deterministic and independent of ``count``.

    Args:
        kind: Scenario family
        count: Number of scenarios (≥ 1)
        rng_seed: Seed
        cfg: Settings (planning horizon and step)

    Raises:
        InvalidParamsError: If ``count < 1`` or the kind is unknown
    """
    cfg = cfg or settings
    if count < 1:
        raise InvalidParamsError("Scenario count must be at least 1", count=count)
    try:
        kind = ScenarioKind(kind)
    except ValueError as e:
        raise InvalidParamsError("Unknown scenario kind", kind=str(kind)) from e
    kind_index = KIND_ORDER.index(kind)
    scenarios = [
        _scenario(kind, i, np.random.default_rng([rng_seed, kind_index, i]), cfg) for i in range(count)
    ]
    logger.info("scenarios_generated", kind=kind.value, count=count, seed=rng_seed)
    return scenarios


def gen_mixed_fleet(count_per_kind: int, rng_seed: int, cfg: Settings | None = None) -> list[Scenario]:
    """``count_per_kind`` scenarios of every kind, kind-major."""
    return [s for kind in KIND_ORDER for s in gen_scenarios(kind, count_per_kind, rng_seed, cfg)]
