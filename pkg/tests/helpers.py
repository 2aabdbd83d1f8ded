"""
Builders shared by the unit and integration tests.
"""

from __future__ import annotations

import math

import numpy as np

from vsf_planner.domain.models import Agent, Lane, MapContext, Pose2D, Trajectory, TrajectorySample


def straight_line(speed: float, horizon: float = 4.0, dt: float = 0.1, y: float = 0.0) -> Trajectory:
    """Constant-speed trajectory along +x starting at ``(0, y)``."""
    t = np.arange(round(horizon / dt) + 1) * dt
    states = np.zeros((t.size, 4))
    states[:, 0] = speed * t
    states[:, 1] = y
    states[:, 3] = speed
    return Trajectory(states=states, dt=dt)


def straight_history(speed: float, dt: float = 0.1) -> Trajectory:
    """One second of constant-speed approach ending at the origin."""
    t = -1.0 + np.arange(round(1.0 / dt) + 1) * dt
    states = np.zeros((t.size, 4))
    states[:, 0] = speed * t
    states[:, 3] = speed
    return Trajectory(states=states, dt=dt, t0=-1.0)


def straight_road() -> MapContext:
    """Two-lane road along +x, ego lane centered on y = 0."""
    return MapContext(
        drivable=[[(-20.0, -1.75), (150.0, -1.75), (150.0, 5.25), (-20.0, 5.25)]],
        lanes=[
            Lane(centerline=[(-20.0, 0.0), (150.0, 0.0)], half_width=1.75),
            Lane(centerline=[(-20.0, 3.5), (150.0, 3.5)], half_width=1.75),
        ],
        route=[(-20.0, 0.0), (150.0, 0.0)],
    )


def moving_agent(
    agent_id: str,
    x0: float,
    y0: float = 0.0,
    heading: float = 0.0,
    speed: float = 0.0,
    horizon: float = 4.0,
    dt: float = 0.1,
) -> Agent:
    """Car-sized agent moving at constant velocity, sampled over the horizon."""
    times = np.arange(round(horizon / dt) + 1) * dt
    track = [
        TrajectorySample(
            t=float(t),
            pose=Pose2D(x=x0 + speed * math.cos(heading) * t, y=y0 + speed * math.sin(heading) * t, heading=heading),
            speed=speed,
        )
        for t in times
    ]
    return Agent(id=agent_id, length=4.5, width=1.9, track=track)


def arc(kappa: float, speed: float, horizon: float = 4.0, dt: float = 0.1) -> Trajectory:
    """Constant-curvature, constant-speed trajectory from the origin heading +x."""
    s = speed * np.arange(round(horizon / dt) + 1) * dt
    heading = kappa * s
    states = np.stack([np.sin(heading) / kappa, (1.0 - np.cos(heading)) / kappa, heading, np.full_like(s, speed)], axis=1)
    return Trajectory(states=states, dt=dt)
