"""
EPDMS metric suite.

The nine sub-metrics are computed in batch by ``StageEvaluator`` over a
``(M, N, 4)`` stack of candidate states; the ``score_*`` functions are
single-trajectory wrappers. ``compose_epdms`` folds sub-scores into the
scalar and ``evaluate_two_stage`` combines both stages of a scenario.
"""

from __future__ import annotations

from collections.abc import Sequence
import math

import numpy as np
import shapely
from shapely.geometry import Polygon

from ..core.config import Settings, settings
from ..core.exceptions import MissingMapDataError, StageMismatchError
from ..core.logging import LoggerMixin
from ..domain.models import HEADING, SPEED, FloatArray, LightState, Scenario, ScenarioStage, Trajectory, wrap_angle
from ..domain.scoring import METRIC_INDEX, METRIC_NAMES, EpdmsResult, MetricWeights, SubScores
from .geometry import PolylineIndex, box_corners, first_contact_time, obb_overlap, segments_intersect, unit_vectors
from .trajectory import history_prefix

# Slack for comparing finite-difference estimates against comfort bounds.
_BOUND_SLACK = 1e-9


class StageEvaluator(LoggerMixin):
    """
    Scores trajectories against one scenario stage.

    Map geometry is prepared once; when ``candidates`` are given, their
    scores are computed up front and the best compliant progress among them
    becomes the EP reference for every trajectory scored afterwards.

    Args:
        stage: Scenario stage
        candidates: Candidate set defining the EP reference
        cfg: Settings (vehicle footprint and metric thresholds)
    """

    def __init__(self, stage: ScenarioStage, candidates: Sequence[Trajectory] = (), cfg: Settings | None = None) -> None:
        self.stage = stage
        self.cfg = cfg or settings
        self.thresholds = self.cfg.metrics
        self.ego_size = (self.cfg.vehicle.length, self.cfg.vehicle.width)

        drivable = [Polygon(ring) for ring in stage.map.drivable]
        self._drivable = shapely.unary_union(drivable) if drivable else None
        if self._drivable is not None:
            shapely.prepare(self._drivable)

        lanes = stage.map.lanes
        self._lanes = PolylineIndex([lane.centerline for lane in lanes]) if lanes else None
        self._lane_direction = np.concatenate([np.asarray(lane.direction) for lane in lanes]) if lanes else np.zeros(0)
        self._route = PolylineIndex([stage.map.route])
        self._history_cache: dict[float, FloatArray] = {}
        self._agent_cache: dict[tuple[float, float, int], list[FloatArray]] = {}

        self.candidates = list(candidates)
        self.reference_progress: float | None = None
        self._candidate_scores: FloatArray | None = None
        if self.candidates:
            raw, progress = self._raw_scores(self.candidates)
            compliant = (raw[:, METRIC_INDEX["nc"]] == 1.0) & (raw[:, METRIC_INDEX["dac"]] == 1.0)
            if np.any(compliant):
                self.reference_progress = float(np.max(progress[compliant]))
            raw[:, METRIC_INDEX["ep"]] = self._ep(progress)
            raw.setflags(write=False)
            self._candidate_scores = raw
            self.logger.debug(
                "stage_candidates_scored",
                scenario=stage.scenario_id,
                stage=stage.stage_index,
                candidates=len(self.candidates),
                compliant=int(compliant.sum()),
            )

    # ── Public API ──────────────────────────────────────────────────────────
    @property
    def candidate_scores(self) -> FloatArray:
        """``(M, 9)`` scores of the candidate set (empty when none were given)."""
        if self._candidate_scores is None:
            return np.zeros((0, len(METRIC_NAMES)))
        return self._candidate_scores

    def score_batch(self, trajs: Sequence[Trajectory]) -> FloatArray:
        """
        Score arbitrary trajectories.

        Returns:
            ``(len(trajs), 9)`` array in ``METRIC_NAMES`` column order

        Raises:
            MissingMapDataError: If a metric needs absent map data
        """
        if not trajs:
            return np.zeros((0, len(METRIC_NAMES)))
        raw, progress = self._raw_scores(trajs)
        raw[:, METRIC_INDEX["ep"]] = self._ep(progress)
        return raw

    def score(self, traj: Trajectory) -> SubScores:
        return SubScores.from_array(self.score_batch([traj])[0])

    # ── Internals ───────────────────────────────────────────────────────────
    def _raw_scores(self, trajs: Sequence[Trajectory]) -> tuple[FloatArray, FloatArray]:
        """Scores with the EP column unset, plus route progress; grouped by sampling."""
        out = np.zeros((len(trajs), len(METRIC_NAMES)))
        progress = np.zeros(len(trajs))
        groups: dict[tuple[int, float, float], list[int]] = {}
        for i, traj in enumerate(trajs):
            groups.setdefault((traj.n, traj.dt, traj.t0), []).append(i)
        for (_, dt, t0), idx in groups.items():
            states = np.stack([trajs[i].states for i in idx])
            times = t0 + np.arange(states.shape[1]) * dt
            out[idx] = self._score_stack(states, times, dt)
            progress[idx] = self._progress(states)
        return out, progress

    def _score_stack(self, states: FloatArray, times: FloatArray, dt: float) -> FloatArray:
        scores = np.zeros((states.shape[0], len(METRIC_NAMES)))
        scores[:, METRIC_INDEX["nc"]] = self._nc(states, times)
        scores[:, METRIC_INDEX["dac"]] = self._dac(states)
        lane_projection = self._lane_projection(states)
        scores[:, METRIC_INDEX["ddc"]] = self._ddc(states, lane_projection[1])
        scores[:, METRIC_INDEX["tlc"]] = self._tlc(states, times)
        scores[:, METRIC_INDEX["ttc"]] = self._ttc(states, times)
        scores[:, METRIC_INDEX["lk"]] = self._lk(lane_projection[0], dt)
        hc, ec = self._comfort(states, dt)
        scores[:, METRIC_INDEX["hc"]] = hc
        scores[:, METRIC_INDEX["ec"]] = ec
        return scores

    def _agent_states(self, times: FloatArray) -> list[FloatArray]:
        key = (float(times[0]), float(times[-1]), len(times))
        if key not in self._agent_cache:
            self._agent_cache[key] = [agent.states_at(times) for agent in self.stage.agents]
        return self._agent_cache[key]

    def _nc(self, states: FloatArray, times: FloatArray) -> FloatArray:
        """0 when the first impact with any agent is the ego's fault."""
        m, n = states.shape[:2]
        at_fault = np.zeros(m, dtype=bool)
        rear_limit = math.pi - math.radians(self.thresholds.rear_sector_deg) / 2.0
        rows = np.arange(m)
        for agent, track in zip(self.stage.agents, self._agent_states(times), strict=True):
            hit = obb_overlap(
                states[..., :2], states[..., HEADING], self.ego_size,
                track[:, :2], track[:, HEADING], (agent.length, agent.width),
            )
            collided = hit.any(axis=1)
            if not collided.any():
                continue
            k = np.argmax(hit, axis=1)
            ego = states[rows, k]
            fwd, left = unit_vectors(ego[:, HEADING])
            rel = track[k, :2] - ego[:, :2]
            bearing = np.arctan2(np.einsum("md,md->m", rel, left), np.einsum("md,md->m", rel, fwd))
            prev = np.where(k > 0, k - 1, np.minimum(k + 1, n - 1))
            motion = np.where((k > 0)[:, None], ego[:, :2] - states[rows, prev, :2], states[rows, prev, :2] - ego[:, :2])
            reversing = np.einsum("md,md->m", motion, fwd) < -1e-9
            stationary = ego[:, SPEED] < self.thresholds.stationary_speed
            rear_impact = (np.abs(bearing) >= rear_limit) & ~reversing
            at_fault |= collided & ~stationary & ~rear_impact
        return np.where(at_fault, 0.0, 1.0)

    def _dac(self, states: FloatArray) -> FloatArray:
        """1 when every footprint corner stays inside the drivable union."""
        if self._drivable is None:
            raise MissingMapDataError("Drivable area is required for DAC", scenario=self.stage.scenario_id)
        corners = box_corners(states[..., :2], states[..., HEADING], *self.ego_size)
        inside = shapely.intersects_xy(self._drivable, corners[..., 0], corners[..., 1])
        return np.where(np.all(inside, axis=(1, 2)), 1.0, 0.0)

    def _lane_projection(self, states: FloatArray) -> tuple[FloatArray, FloatArray]:
        """Distance to and travel direction of the nearest lane segment per sample."""
        if self._lanes is None:
            raise MissingMapDataError("Lanes are required for DDC and LK", scenario=self.stage.scenario_id)
        proj = self._lanes.project(states[..., :2])
        return proj.distance, self._lane_direction[proj.segment]

    def _ddc(self, states: FloatArray, lane_heading: FloatArray) -> FloatArray:
        """1 while the distance driven against the lane direction stays below the limit."""
        opposed = (np.abs(wrap_angle(states[..., HEADING] - lane_heading)) > math.pi / 2.0).astype(np.float64)
        steps = np.hypot(np.diff(states[..., 0], axis=1), np.diff(states[..., 1], axis=1))
        distance = np.sum(steps * 0.5 * (opposed[:, :-1] + opposed[:, 1:]), axis=1)
        return np.where(distance < self.thresholds.ddc_max_opposed_distance, 1.0, 0.0)

    def _tlc(self, states: FloatArray, times: FloatArray) -> FloatArray:
        """0 when the front bumper crosses a stop line during a red step."""
        violated = np.zeros(states.shape[0], dtype=bool)
        if not self.stage.map.traffic_lights or states.shape[1] < 2:
            return np.ones(states.shape[0])
        fwd, _ = unit_vectors(states[..., HEADING])
        front = states[..., :2] + self.ego_size[0] / 2.0 * fwd
        for light in self.stage.map.traffic_lights:
            red = np.array([light.state_at(float(t)) == LightState.RED for t in times])
            red_step = red[:-1] | red[1:]
            if not red_step.any():
                continue
            a, b = (np.asarray(p, dtype=np.float64) for p in light.stop_line)
            crossing = segments_intersect(front[:, :-1], front[:, 1:], a, b)
            violated |= np.any(crossing & red_step, axis=1)
        return np.where(violated, 0.0, 1.0)

    def _progress(self, states: FloatArray) -> FloatArray:
        """Route arc-length advance between the first and last sample."""
        proj = self._route.project(states[:, [0, -1], :2])
        return proj.arc_length[:, 1] - proj.arc_length[:, 0]

    def _ep(self, progress: FloatArray) -> FloatArray:
        """Progress relative to the reference, clipped to [0, 1]."""
        reference = np.full_like(progress, self.reference_progress) if self.reference_progress is not None else progress.copy()
        # no positive reference: the plan is its own reference
        degenerate = reference <= 0.0
        ratio = np.clip(progress / np.where(degenerate, 1.0, reference), 0.0, 1.0)
        return np.where(degenerate, np.where(progress < 0.0, 0.0, 1.0), ratio)

    def _ttc(self, states: FloatArray, times: FloatArray) -> FloatArray:
        """0 when constant-velocity propagation reaches an overlap within the horizon."""
        violated = np.zeros(states.shape[0], dtype=bool)
        fwd, _ = unit_vectors(states[..., HEADING])
        ego_velocity = states[..., SPEED, None] * fwd
        for agent, track in zip(self.stage.agents, self._agent_states(times), strict=True):
            agent_fwd, _ = unit_vectors(track[:, HEADING])
            contact = first_contact_time(
                states[..., :2], states[..., HEADING], ego_velocity, self.ego_size,
                track[:, :2], track[:, HEADING], track[:, SPEED, None] * agent_fwd, (agent.length, agent.width),
                self.thresholds.ttc_horizon,
            )
            violated |= np.any(np.isfinite(contact), axis=1)
        return np.where(violated, 0.0, 1.0)

    def _lk(self, deviation: FloatArray, dt: float) -> FloatArray:
        """0 when deviation exceeds the limit for a run longer than the allowed duration."""
        flagged = deviation > self.thresholds.lk_max_deviation
        run = np.zeros(flagged.shape[0], dtype=np.int64)
        longest = np.zeros_like(run)
        for k in range(flagged.shape[1]):
            run = np.where(flagged[:, k], run + 1, 0)
            longest = np.maximum(longest, run)
        return np.where(longest * dt > self.thresholds.lk_max_duration + _BOUND_SLACK, 0.0, 1.0)

    def _comfort(self, states: FloatArray, dt: float) -> tuple[FloatArray, FloatArray]:
        """HC and EC from forward differences over history + plan."""
        if dt not in self._history_cache:
            self._history_cache[dt] = history_prefix(self.stage.ego_history, dt)
        past = self._history_cache[dt]
        full = np.concatenate([np.broadcast_to(past, (states.shape[0],) + past.shape), states], axis=1)
        m = full.shape[0]
        if full.shape[1] < 2:
            return np.ones(m), np.ones(m)

        t = self.thresholds
        speed = full[..., SPEED]
        accel = np.diff(speed, axis=1) / dt
        yaw_rate = wrap_angle(np.diff(full[..., HEADING], axis=1)) / dt
        lateral = 0.5 * (speed[:, :-1] + speed[:, 1:]) * yaw_rate

        hc = np.all(np.abs(accel) <= t.hc_max_lon_accel + _BOUND_SLACK, axis=1) & np.all(
            np.abs(lateral) <= t.hc_max_lat_accel + _BOUND_SLACK, axis=1
        )
        ec = hc & np.all(np.abs(yaw_rate) <= t.ec_max_yaw_rate + _BOUND_SLACK, axis=1)
        if accel.shape[1] >= 2:
            jerk = np.diff(accel, axis=1) / dt
            yaw_accel = np.diff(yaw_rate, axis=1) / dt
            ec &= np.all(np.abs(jerk) <= t.ec_max_jerk + _BOUND_SLACK, axis=1)
            ec &= np.all(np.abs(yaw_accel) <= t.ec_max_yaw_accel + _BOUND_SLACK, axis=1)
        return hc.astype(np.float64), ec.astype(np.float64)


# ═══════════════════════════════════════════════════════════════════════════
# Single-trajectory wrappers
# ═══════════════════════════════════════════════════════════════════════════
def _metric(name: str, traj: Trajectory, stage: ScenarioStage, cfg: Settings | None) -> float:
    return float(StageEvaluator(stage, cfg=cfg).score_batch([traj])[0, METRIC_INDEX[name]])


def score_nc(traj: Trajectory, stage: ScenarioStage, cfg: Settings | None = None) -> float:
    """No at-fault collision."""
    return _metric("nc", traj, stage, cfg)


def score_dac(traj: Trajectory, stage: ScenarioStage, cfg: Settings | None = None) -> float:
    """Drivable area compliance."""
    return _metric("dac", traj, stage, cfg)


def score_ddc(traj: Trajectory, stage: ScenarioStage, cfg: Settings | None = None) -> float:
    """Driving direction compliance."""
    return _metric("ddc", traj, stage, cfg)


def score_tlc(traj: Trajectory, stage: ScenarioStage, cfg: Settings | None = None) -> float:
    """Traffic light compliance."""
    return _metric("tlc", traj, stage, cfg)


def score_ep(
    traj: Trajectory,
    stage: ScenarioStage,
    candidates: Sequence[Trajectory] | None = None,
    cfg: Settings | None = None,
) -> float:
    """
    Ego progress relative to the best compliant candidate.

    Without candidates the trajectory is its own reference.
    """
    evaluator = StageEvaluator(stage, candidates or (), cfg=cfg)
    return float(evaluator.score_batch([traj])[0, METRIC_INDEX["ep"]])


def score_ttc(traj: Trajectory, stage: ScenarioStage, cfg: Settings | None = None) -> float:
    """Time to collision."""
    return _metric("ttc", traj, stage, cfg)


def score_lk(traj: Trajectory, stage: ScenarioStage, cfg: Settings | None = None) -> float:
    """Lane keeping."""
    return _metric("lk", traj, stage, cfg)


def score_hc(traj: Trajectory, stage: ScenarioStage, cfg: Settings | None = None) -> float:
    """History comfort."""
    return _metric("hc", traj, stage, cfg)


def score_ec(traj: Trajectory, stage: ScenarioStage, cfg: Settings | None = None) -> float:
    """Extended comfort."""
    return _metric("ec", traj, stage, cfg)


# ═══════════════════════════════════════════════════════════════════════════
# Composition
# ═══════════════════════════════════════════════════════════════════════════
def compose_epdms_batch(values: FloatArray, weights: MetricWeights) -> FloatArray:
    """
    EPDMS of every row of an ``(M, 9)`` score array.

    Raises:
        InvalidWeightsError: If the grouping is invalid
    """
    weights.check()
    arr = np.atleast_2d(np.asarray(values, dtype=np.float64))
    penalty = np.prod(arr[:, weights.penalty_mask()], axis=1)
    w = weights.weight_vector()
    weighted = arr @ w / w.sum()
    return np.clip(penalty * weighted, 0.0, 1.0)


def compose_epdms(scores: SubScores, weights: MetricWeights | None = None) -> float:
    """
    Penalty product times weighted mean.

    Raises:
        InvalidWeightsError: If the grouping is invalid
    """
    return float(compose_epdms_batch(scores.as_array()[None, :], weights or MetricWeights())[0])


def evaluate_two_stage(
    traj1: Trajectory,
    traj2: Trajectory | None,
    scenario: Scenario,
    weights: MetricWeights | None = None,
    evaluators: Sequence[StageEvaluator] | None = None,
    cfg: Settings | None = None,
) -> EpdmsResult:
    """
    Score a planner decision over both stages of a scenario.

    Args:
        traj1: Stage-1 trajectory
        traj2: Stage-2 trajectory, required iff the scenario has a stage 2
        scenario: Scenario
        weights: Metric grouping (defaults to the standard EPDMS grouping)
        evaluators: Prepared per-stage evaluators (carry the EP reference)
        cfg: Settings used when evaluators are built here

    Returns:
        Stage scores and the per-scenario product

    Raises:
        StageMismatchError: If ``traj2`` presence does not match the scenario
    """
    if (traj2 is None) == scenario.has_stage2:
        raise StageMismatchError(
            "Stage-2 trajectory must be given exactly when the scenario has a stage 2",
            scenario=scenario.id,
            has_stage2=scenario.has_stage2,
        )
    weights = weights or MetricWeights()
    if evaluators is None:
        evaluators = [StageEvaluator(stage, cfg=cfg) for stage in scenario.stages()]

    stage1 = evaluators[0].score(traj1)
    epdms1 = compose_epdms(stage1, weights)
    if traj2 is None:
        return EpdmsResult(stage1=stage1, stage1_epdms=epdms1, epdms=epdms1)
    stage2 = evaluators[1].score(traj2)
    epdms2 = compose_epdms(stage2, weights)
    return EpdmsResult(stage1=stage1, stage2=stage2, stage1_epdms=epdms1, stage2_epdms=epdms2, epdms=epdms1 * epdms2)


def fleet_epdms(results: Sequence[EpdmsResult]) -> float:
    """Mean of per-scenario EPDMS (0.0 for an empty fleet)."""
    if not results:
        return 0.0
    return float(np.mean([r.epdms for r in results]))
