"""
Trajectory utilities: resampling, rigid transforms and kinematic estimates.
"""

from __future__ import annotations

import math

import numpy as np

from ..core.exceptions import EmptyTrajectoryError, InvalidParamsError
from ..domain.models import HEADING, SPEED, FloatArray, Trajectory, wrap_angle

# Fractional index below which a query time is treated as an exact knot.
_KNOT_TOLERANCE = 1e-9


def resample_trajectory(traj: Trajectory, dt_new: float) -> Trajectory:
    """
    Resample a trajectory at a new uniform step.

    x, y and speed are interpolated linearly; heading follows the shortest
    arc between neighbouring samples. Times that coincide with existing
    samples reproduce them exactly, so resampling at the same step is the
    identity and the first sample is always preserved. The last sample is
    preserved whenever ``dt_new`` divides the horizon; otherwise the output
    stops at the last multiple of ``dt_new`` inside it.

    Args:
        traj: Source trajectory
        dt_new: New sample step (s)

    Returns:
        Resampled trajectory starting at ``traj.t0``

    Raises:
        EmptyTrajectoryError: If the trajectory has no samples
        InvalidParamsError: If ``dt_new`` is not positive
    """
    if traj.n == 0:
        raise EmptyTrajectoryError("Cannot resample an empty trajectory")
    if not (math.isfinite(dt_new) and dt_new > 0.0):
        raise InvalidParamsError("Resampling step must be positive", dt=dt_new)
    if dt_new == traj.dt or traj.n == 1:
        return traj if dt_new == traj.dt else Trajectory(states=traj.states, dt=dt_new, t0=traj.t0)

    count = int(math.floor(traj.horizon / dt_new + _KNOT_TOLERANCE)) + 1
    pos = np.arange(count, dtype=np.float64) * (dt_new / traj.dt)
    idx = np.minimum(np.floor(pos + _KNOT_TOLERANCE).astype(np.int64), traj.n - 1)
    frac = pos - idx
    frac[np.abs(frac) < _KNOT_TOLERANCE] = 0.0
    nxt = np.minimum(idx + 1, traj.n - 1)

    src = traj.states
    delta = src[nxt] - src[idx]
    delta[:, HEADING] = wrap_angle(delta[:, HEADING])
    out = src[idx] + frac[:, None] * delta
    out[:, HEADING] = wrap_angle(out[:, HEADING])
    out[:, SPEED] = np.maximum(out[:, SPEED], 0.0)
    return Trajectory(states=out, dt=dt_new, t0=traj.t0)


def transform_trajectory(traj: Trajectory, dx: float, dy: float, dtheta: float) -> Trajectory:
    """
    Apply a rigid-body motion: rotate by ``dtheta`` about the origin, then translate.

    Args:
        traj: Trajectory to move
        dx, dy: Translation (m)
        dtheta: Rotation (rad)
    """
    c, s = math.cos(dtheta), math.sin(dtheta)
    out = np.array(traj.states, copy=True)
    out[:, 0] = c * traj.x - s * traj.y + dx
    out[:, 1] = s * traj.x + c * traj.y + dy
    out[:, HEADING] = wrap_angle(traj.heading + dtheta)
    return Trajectory(states=out, dt=traj.dt, t0=traj.t0)


def step_lengths(traj: Trajectory) -> FloatArray:
    """Chord length of every step, shape ``(N-1,)``."""
    return np.hypot(np.diff(traj.x), np.diff(traj.y))


def arc_length(traj: Trajectory) -> float:
    """Total polyline length (m)."""
    return float(step_lengths(traj).sum())


def step_curvature(traj: Trajectory) -> FloatArray:
    """
    Curvature of each step, shape ``(N-1,)``.

    Uses the circle tangent to both end headings, ``2 sin(Δθ/2) / chord``,
    which is exact on circular arcs. Steps shorter than 1e-9 m count as
    zero curvature.
    """
    if traj.n < 2:
        return np.zeros(0)
    chord = step_lengths(traj)
    dtheta = wrap_angle(np.diff(traj.heading))
    kappa = np.zeros_like(chord)
    moving = chord > 1e-9
    kappa[moving] = 2.0 * np.sin(dtheta[moving] / 2.0) / chord[moving]
    return kappa


def heading_from_positions(xy: FloatArray, initial_heading: float) -> FloatArray:
    """
    Headings of a polyline: ``initial_heading`` at the first point, then the
    direction of the incoming segment (held through zero-length segments).
    """
    headings = np.empty(len(xy), dtype=np.float64)
    headings[0] = initial_heading
    seg = np.diff(xy, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    seg_heading = np.arctan2(seg[:, 1], seg[:, 0])
    for k in range(1, len(xy)):
        headings[k] = seg_heading[k - 1] if seg_len[k - 1] > 1e-9 else headings[k - 1]
    return headings


def history_prefix(history: Trajectory, dt: float) -> FloatArray:
    """
    Past states at whole multiples of ``dt`` before the end of ``history``.

    The history's last sample (the t=0 hand-off) is excluded; it is the
    plan's first sample.

    Returns:
        ``(B, 4)`` states, oldest first (``B`` may be zero)
    """
    back = int(math.floor(history.horizon / dt + _KNOT_TOLERANCE))
    if back == 0:
        return np.zeros((0, 4), dtype=np.float64)
    t_end = history.t0 + history.horizon
    query = t_end - np.arange(back, 0, -1, dtype=np.float64) * dt
    times = history.times
    past = np.empty((back, 4), dtype=np.float64)
    for col in (0, 1, SPEED):
        past[:, col] = np.interp(query, times, history.states[:, col])
    past[:, HEADING] = wrap_angle(np.interp(query, times, np.unwrap(history.heading)))
    past[:, SPEED] = np.maximum(past[:, SPEED], 0.0)
    return past


def with_history(history: Trajectory, plan: Trajectory) -> Trajectory:
    """
    Concatenate an ego history with a plan at the plan's step.

    Args:
        history: Past trajectory ending at the plan start
        plan: Planned trajectory

    Returns:
        Trajectory covering history and plan without duplicating the hand-off sample
    """
    past = history_prefix(history, plan.dt)
    return Trajectory(states=np.vstack([past, plan.states]), dt=plan.dt, t0=plan.t0 - len(past) * plan.dt)
