"""
Candidate trajectory generation.

Two generators feed the scorers:

- ``generate_vocabulary``: a dense grid of unicycle rollouts (curvature ×
  acceleration × optional second-phase curvature).
- ``generate_anchors``: seeded, smoothly ramped endpoint perturbations of
  seed trajectories.
"""

from __future__ import annotations

import math

import numpy as np

from ..core.config import Settings
from ..core.exceptions import InvalidParamsError
from ..core.logging import get_logger
from ..domain.models import (
    HEADING,
    SPEED,
    AnchorParams,
    EgoState,
    FloatArray,
    Trajectory,
    VocabularyParams,
    wrap_angle,
)
from .trajectory import heading_from_positions, step_curvature, step_lengths

logger = get_logger(__name__)


def _clipped_distance(v0: float, accel: float, v_max: float, t: FloatArray) -> FloatArray:
    """
    Distance travelled at ``v(s) = clip(v0 + a·s, 0, v_max)`` over ``[0, t]``.

    Exact piecewise integral: with ``G`` the antiderivative of
    ``clip(u, 0, v_max)`` in ``u``, the distance is ``(G(v0 + a t) - G(v0)) / a``.
    """
    if accel == 0.0:
        return min(max(v0, 0.0), v_max) * t

    def antiderivative(u: FloatArray) -> FloatArray:
        inner = np.clip(u, 0.0, v_max)
        return inner * inner / 2.0 + v_max * np.maximum(u - v_max, 0.0)

    return (antiderivative(v0 + accel * t) - antiderivative(np.asarray(v0))) / accel


def _rollout(
    ego: EgoState,
    curvature: FloatArray,
    accel: float,
    params: VocabularyParams,
    steps: int,
) -> FloatArray:
    """
    Integrate one unicycle profile.

    Per step the heading advances by ``κ·ds`` and the position by the exact
    chord of that arc, taken along the midpoint heading.
    """
    t = np.arange(steps + 1, dtype=np.float64) * params.dt
    dist = _clipped_distance(ego.speed, accel, params.v_max, t)
    ds = np.diff(dist)
    dtheta = curvature * ds
    half = dtheta / 2.0
    chord = ds * np.sinc(half / math.pi)
    theta = ego.pose.heading + np.concatenate([[0.0], np.cumsum(dtheta)])
    mid = theta[:-1] + half

    states = np.empty((steps + 1, 4), dtype=np.float64)
    states[0, :2] = (ego.pose.x, ego.pose.y)
    states[1:, 0] = ego.pose.x + np.cumsum(chord * np.cos(mid))
    states[1:, 1] = ego.pose.y + np.cumsum(chord * np.sin(mid))
    states[:, HEADING] = wrap_angle(theta)
    states[:, SPEED] = np.clip(ego.speed + accel * t, 0.0, params.v_max)
    return states


def generate_vocabulary(ego: EgoState, params: VocabularyParams) -> list[Trajectory]:
    """
    Generate the kinematic vocabulary.

    One trajectory per grid combination, ordered curvature-major, then
    acceleration, then second-phase curvature. The second-phase curvature
    applies to every step starting at or after ``switch_time``.

    Args:
        ego: Initial state (pose, speed)
        params: Grids and sampling

    Returns:
        ``|κ| · |a|`` trajectories (times the second-phase grid size when present)

    Raises:
        InvalidParamsError: If the grids are invalid
    """
    params.check()
    steps = round(params.horizon / params.dt)
    step_start = np.arange(steps, dtype=np.float64) * params.dt
    phase2 = params.second_phase
    second_grid = phase2.curvature_grid if phase2 is not None else [None]

    vocabulary: list[Trajectory] = []
    for kappa in params.curvature_grid:
        for accel in params.accel_grid:
            for kappa2 in second_grid:
                curvature = np.full(steps, float(kappa))
                if phase2 is not None and kappa2 is not None:
                    curvature[step_start >= phase2.switch_time - 1e-9] = float(kappa2)
                states = _rollout(ego, curvature, float(accel), params, steps)
                vocabulary.append(Trajectory(states=states, dt=params.dt))

    logger.debug("vocabulary_generated", count=len(vocabulary))
    return vocabulary


def _ramp(u: FloatArray) -> FloatArray:
    """Monotone smoothstep from 0 at u=0 to 1 at u=1 with flat ends."""
    return 3.0 * u * u - 2.0 * u * u * u


def _perturb(seed: Trajectory, d_lon: float, d_lat: float) -> Trajectory:
    """Blend an endpoint offset along the seed in its local tangent/normal frame."""
    u = np.arange(seed.n, dtype=np.float64) / max(seed.n - 1, 1)
    r = _ramp(u)
    cos_h, sin_h = np.cos(seed.heading), np.sin(seed.heading)
    xy = np.empty((seed.n, 2), dtype=np.float64)
    xy[:, 0] = seed.x + r * (d_lon * cos_h - d_lat * sin_h)
    xy[:, 1] = seed.y + r * (d_lon * sin_h + d_lat * cos_h)

    states = np.empty((seed.n, 4), dtype=np.float64)
    states[:, :2] = xy
    states[:, HEADING] = heading_from_positions(xy, float(seed.heading[0]))
    # Seed speed corrected by the arc length the offset adds to each step.
    extra = np.hypot(np.diff(xy[:, 0]), np.diff(xy[:, 1])) - step_lengths(seed)
    states[0, SPEED] = seed.speed[0]
    states[1:, SPEED] = np.maximum(seed.speed[1:] + extra / seed.dt, 0.0)
    return Trajectory(states=states, dt=seed.dt, t0=seed.t0)


def generate_anchors(ego: EgoState, seeds: list[Trajectory], params: AnchorParams) -> list[Trajectory]:
    """
    Generate perturbation anchors around seed trajectories.

    For every seed, ``seed_count`` copies receive a longitudinal and lateral
    endpoint offset drawn from ``N(0, scale²)`` with a generator seeded by
    ``rng_seed``. The offset is blended in by a smoothstep ramp (zero at the
    first sample), headings are recomputed from positions and each speed is
    corrected by the arc length the offset adds to its step. An anchor whose
    curvature exceeds the bound has its offset halved, at most
    ``max_halvings`` times, after which the seed itself is used. A zero
    offset reproduces the seed exactly.

    Args:
        ego: Initial ego state (unused beyond logging; seeds carry the start)
        seeds: Seed trajectories
        params: Perturbation parameters

    Returns:
        ``len(seeds) * seed_count`` anchors, seed-major

    Raises:
        InvalidParamsError: If parameters are invalid or no seeds are given
    """
    params.check()
    if not seeds:
        raise InvalidParamsError("Anchor generation needs at least one seed")

    rng = np.random.default_rng(params.rng_seed)
    anchors: list[Trajectory] = []
    halved = 0
    for seed in seeds:
        for _ in range(params.seed_count):
            d_lon = float(rng.normal(0.0, params.noise_scale_lon))
            d_lat = float(rng.normal(0.0, params.noise_scale_lat))
            anchor = seed
            for _attempt in range(params.max_halvings + 1):
                if d_lon == 0.0 and d_lat == 0.0:
                    anchor = seed
                    break
                candidate = _perturb(seed, d_lon, d_lat)
                if np.max(np.abs(step_curvature(candidate)), initial=0.0) <= params.curvature_max + 1e-6:
                    anchor = candidate
                    break
                d_lon, d_lat = d_lon / 2.0, d_lat / 2.0
                halved += 1
            else:
                anchor = seed
            anchors.append(anchor)

    logger.debug("anchors_generated", count=len(anchors), halvings=halved, ego_speed=ego.speed)
    return anchors


def candidate_set(ego: EgoState, cfg: Settings, rng_seed: int, include_anchors: bool = True, anchor_seeds: int = 8) -> list[Trajectory]:
    """
    Vocabulary from the settings grids, optionally followed by anchors.

    Anchors perturb ``anchor_seeds`` vocabulary members spread evenly over
    the grid order.

    Raises:
        InvalidParamsError: If the configured grids are invalid
    """
    vocabulary = generate_vocabulary(ego, VocabularyParams.from_settings(cfg))
    if not include_anchors:
        return vocabulary
    picks = np.unique(np.linspace(0, len(vocabulary) - 1, min(anchor_seeds, len(vocabulary))).round().astype(int))
    seeds = [vocabulary[i] for i in picks]
    return vocabulary + generate_anchors(ego, seeds, AnchorParams.from_settings(cfg, rng_seed=rng_seed))
