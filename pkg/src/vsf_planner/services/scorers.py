"""
Trajectory scorers.

Every scorer maps a candidate list in one scenario stage to a
``ScorerOutput`` (one row of nine sub-scores per candidate):

- oracle: the exact metric values
- noisy: oracle plus seeded Gaussian noise, a stand-in for weaker backbones
- linear: per-metric ridge heads over trajectory, ego and directive features
"""

from __future__ import annotations

from collections.abc import Sequence
import math
from typing import Protocol
import zlib

import numpy as np
import scipy.linalg
import scipy.stats
import shapely
from shapely.geometry import Polygon

from ..core.config import Settings, settings
from ..core.exceptions import DegenerateDesignError, DimensionMismatchError, InvalidParamsError, LengthMismatchError
from ..core.logging import LoggerMixin, get_logger
from ..domain.models import Command, EgoState, FloatArray, ScenarioStage, Trajectory, wrap_angle
from ..domain.scoring import (
    METRIC_NAMES,
    TRAJECTORY_FEATURE_NAMES,
    CognitiveDirective,
    DirectiveEmbedding,
    LinearScorerParams,
    ScorerOutput,
    feature_order,
)
from .directive import DirectiveProvider, encode_directive
from .geometry import PolylineIndex
from .metrics import StageEvaluator
from .trajectory import step_curvature

logger = get_logger(__name__)

# Clearance reported when a stage has no agents (m).
NO_AGENT_CLEARANCE = 50.0


# ═══════════════════════════════════════════════════════════════════════════
# Features
# ═══════════════════════════════════════════════════════════════════════════
def trajectory_features(trajs: Sequence[Trajectory], stage: ScenarioStage) -> FloatArray:
    """
    Fixed-length description of each trajectory, in ``TRAJECTORY_FEATURE_NAMES`` order.

    Endpoints are expressed in the ego frame. Lateral offsets are signed
    distances to the nearest lane centerline (the route when the map has no
    lanes); clearance is the smallest center distance to any agent.

    Returns:
        ``(len(trajs), 16)`` finite array
    """
    out = np.zeros((len(trajs), len(TRAJECTORY_FEATURE_NAMES)))
    if not trajs:
        return out

    pose = stage.ego.pose
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    lanes = stage.map.lanes
    reference = PolylineIndex([lane.centerline for lane in lanes] if lanes else [stage.map.route])
    drivable = [Polygon(ring) for ring in stage.map.drivable]
    area = shapely.unary_union(drivable) if drivable else None
    if area is not None:
        shapely.prepare(area)
    tracks: dict[tuple[int, float, float], list[FloatArray]] = {}

    for i, traj in enumerate(trajs):
        dx, dy = traj.x[-1] - pose.x, traj.y[-1] - pose.y
        kappa = np.abs(step_curvature(traj))
        accel = np.abs(np.diff(traj.speed)) / traj.dt
        steps = np.hypot(np.diff(traj.x), np.diff(traj.y))

        key = (traj.n, traj.dt, traj.t0)
        if key not in tracks:
            tracks[key] = [agent.states_at(traj.times)[:, :2] for agent in stage.agents]
        clearance = min(
            (float(np.min(np.hypot(*(traj.xy - track).T))) for track in tracks[key]),
            default=NO_AGENT_CLEARANCE,
        )
        inside = shapely.intersects_xy(area, traj.x, traj.y) if area is not None else np.zeros(traj.n, dtype=bool)
        offset = reference.project(traj.xy).signed_offset

        out[i] = (
            c * dx + s * dy,
            -s * dx + c * dy,
            wrap_angle(traj.heading[-1] - pose.heading),
            kappa.mean() if kappa.size else 0.0,
            kappa.max(initial=0.0),
            accel.mean() if accel.size else 0.0,
            accel.max(initial=0.0),
            steps.sum(),
            min(clearance, NO_AGENT_CLEARANCE),
            np.mean(inside),
            offset.mean(),
            offset.std(),
            offset.min(),
            offset.max(),
            offset[-1],
            np.abs(offset).mean(),
        )
    return out


def ego_features(ego: EgoState) -> FloatArray:
    """Speed, acceleration and the one-hot navigation command."""
    one_hot = [1.0 if ego.command == cmd else 0.0 for cmd in (Command.LEFT, Command.FORWARD, Command.RIGHT)]
    return np.array([ego.speed, ego.accel, *one_hot], dtype=np.float64)


def design_matrix(
    trajs: Sequence[Trajectory],
    stage: ScenarioStage,
    ego: EgoState,
    directive: CognitiveDirective | None,
    embedding: DirectiveEmbedding,
) -> FloatArray:
    """
    Rows ``[trajectory ‖ ego ‖ directive embedding]``, one per trajectory.

    A missing directive contributes a zero embedding block.
    """
    traj_block = trajectory_features(trajs, stage)
    ego_block = np.broadcast_to(ego_features(ego), (len(trajs), 5))
    vector = encode_directive(directive, embedding) if directive is not None else np.zeros(embedding.dim)
    dir_block = np.broadcast_to(vector, (len(trajs), embedding.dim))
    return np.hstack([traj_block, ego_block, dir_block])


# ═══════════════════════════════════════════════════════════════════════════
# Oracle and noisy scorers
# ═══════════════════════════════════════════════════════════════════════════
def oracle_scorer(
    trajs: Sequence[Trajectory],
    stage: ScenarioStage,
    evaluator: StageEvaluator | None = None,
    scorer_id: str = "oracle",
    cfg: Settings | None = None,
) -> ScorerOutput:
    """
    Exact sub-scores, with the candidate list itself as the EP reference.

    Args:
        trajs: Candidates
        stage: Scenario stage
        evaluator: Evaluator already built over ``trajs`` (reused when given)
        scorer_id: Output id
        cfg: Settings

    Raises:
        MissingMapDataError: Propagated from the metric suite
    """
    if not trajs:
        return ScorerOutput(scorer_id=scorer_id, values=np.zeros((0, len(METRIC_NAMES))))
    if evaluator is None or len(evaluator.candidates) != len(trajs) or any(
        a is not b for a, b in zip(evaluator.candidates, trajs, strict=True)
    ):
        evaluator = StageEvaluator(stage, trajs, cfg=cfg)
    return ScorerOutput(scorer_id=scorer_id, values=evaluator.candidate_scores)


def noise_matrix(rows: int, noise_sd: float, rng_seed: int, scorer_id: str, stage: ScenarioStage) -> FloatArray:
    """
    Pre-clip perturbation applied by ``noisy_scorer``.

    The generator is keyed on the seed, the scorer id and the stage, so
    scorers sharing a seed still draw independent noise.

    Raises:
        InvalidParamsError: If ``noise_sd`` is negative
    """
    if not (math.isfinite(noise_sd) and noise_sd >= 0.0):
        raise InvalidParamsError("Noise standard deviation must be non-negative", noise_sd=noise_sd)
    key = [rng_seed, zlib.crc32(scorer_id.encode()), zlib.crc32(f"{stage.scenario_id}/{stage.stage_index}".encode())]
    rng = np.random.default_rng(key)
    return rng.normal(0.0, noise_sd, size=(rows, len(METRIC_NAMES))) if noise_sd > 0.0 else np.zeros((rows, len(METRIC_NAMES)))


def noisy_scorer(
    trajs: Sequence[Trajectory],
    stage: ScenarioStage,
    noise_sd: float,
    rng_seed: int,
    scorer_id: str = "noisy",
    oracle: ScorerOutput | None = None,
    cfg: Settings | None = None,
) -> ScorerOutput:
    """
    Oracle sub-scores plus seeded Gaussian noise, clipped to [0, 1].

    Args:
        trajs: Candidates
        stage: Scenario stage
        noise_sd: Noise standard deviation (≥ 0)
        rng_seed: Seed
        scorer_id: Output id (part of the noise key)
        oracle: Precomputed oracle output for ``trajs``
        cfg: Settings

    Raises:
        InvalidParamsError: If ``noise_sd`` is negative
        LengthMismatchError: If ``oracle`` does not cover ``trajs``
    """
    base = oracle if oracle is not None else oracle_scorer(trajs, stage, cfg=cfg)
    if len(base) != len(trajs):
        raise LengthMismatchError("Oracle output does not match the candidates", oracle=len(base), candidates=len(trajs))
    noise = noise_matrix(len(trajs), noise_sd, rng_seed, scorer_id, stage)
    return ScorerOutput(scorer_id=scorer_id, values=np.clip(base.values + noise, 0.0, 1.0))


# ═══════════════════════════════════════════════════════════════════════════
# Linear scorer
# ═══════════════════════════════════════════════════════════════════════════
def fit_linear_scorer(
    design: FloatArray,
    targets: FloatArray,
    ridge_lambda: float,
    embedding: DirectiveEmbedding,
    sample_weight: FloatArray | None = None,
) -> LinearScorerParams:
    """
    Fit one ridge head per metric in closed form.

    Minimizes ``Σ_i s_i (x_i·w + b − y_i)² + λ‖w‖²`` with an unpenalized
    bias, via the normal equations of the weighted-centered design.

    Args:
        design: ``(n, D)`` rows from ``design_matrix``
        targets: ``(n, 9)`` true sub-scores
        ridge_lambda: λ ≥ 0
        embedding: Embedding the directive block was built with
        sample_weight: Optional positive per-row weights

    Returns:
        Fitted parameters

    Raises:
        DimensionMismatchError: If shapes disagree with the feature order
        DegenerateDesignError: With too few rows, or a rank-deficient design at λ = 0
        InvalidParamsError: If λ is negative or weights are not positive
    """
    X = np.asarray(design, dtype=np.float64)
    Y = np.asarray(targets, dtype=np.float64)
    order = feature_order(embedding.dim)
    if X.ndim != 2 or X.shape[1] != len(order):
        raise DimensionMismatchError("Design width does not match the feature order", expected=len(order), actual=X.shape)
    if Y.shape != (X.shape[0], len(METRIC_NAMES)):
        raise DimensionMismatchError("Targets must have one row of nine scores per design row", shape=Y.shape)
    if not (math.isfinite(ridge_lambda) and ridge_lambda >= 0.0):
        raise InvalidParamsError("Ridge lambda must be non-negative", ridge_lambda=ridge_lambda)
    n, dim = X.shape
    if n < dim + 1:
        raise DegenerateDesignError("Too few training rows", rows=n, required=dim + 1)

    w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
    if w.shape != (n,) or np.any(w <= 0.0) or not np.all(np.isfinite(w)):
        raise InvalidParamsError("Sample weights must be positive, one per row")

    x_mean = w @ X / w.sum()
    y_mean = w @ Y / w.sum()
    Xc = X - x_mean
    Yc = Y - y_mean
    gram = Xc.T @ (w[:, None] * Xc)
    if ridge_lambda == 0.0:
        rank = int(np.linalg.matrix_rank(np.sqrt(w)[:, None] * Xc))
        if rank < dim:
            raise DegenerateDesignError("Design is rank deficient and unregularized", rank=rank, dim=dim)

    lhs = gram + ridge_lambda * np.eye(dim)
    rhs = Xc.T @ (w[:, None] * Yc)
    try:
        coef = scipy.linalg.solve(lhs, rhs, assume_a="pos")
    except (scipy.linalg.LinAlgError, ValueError) as e:
        raise DegenerateDesignError("Normal equations are singular", error=str(e)) from e
    bias = y_mean - x_mean @ coef

    logger.info("linear_scorer_fitted", rows=n, dim=dim, ridge_lambda=ridge_lambda)
    return LinearScorerParams(
        feature_order=order,
        ridge_lambda=ridge_lambda,
        bias=bias,
        coef=coef.T,
        embedding=embedding,
    )


def predict_linear(design: FloatArray, params: LinearScorerParams) -> FloatArray:
    """
    Clipped linear predictions for prepared design rows.

    Raises:
        DimensionMismatchError: If the row width differs from the parameters
    """
    X = np.asarray(design, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.dim:
        raise DimensionMismatchError("Feature width does not match the parameters", expected=params.dim, actual=X.shape)
    return np.clip(X @ params.coef.T + params.bias, 0.0, 1.0)


def linear_scorer(
    trajs: Sequence[Trajectory],
    stage: ScenarioStage,
    ego: EgoState,
    directive: CognitiveDirective | None,
    params: LinearScorerParams,
    scorer_id: str = "linear",
) -> ScorerOutput:
    """
    Directive-conditioned linear predictions, ``clip(w·x + b, 0, 1)``.

    ``directive=None`` zeroes the embedding block (a conventional scorer).

    Raises:
        DimensionMismatchError: If the parameters do not fit the features
    """
    if not trajs:
        return ScorerOutput(scorer_id=scorer_id, values=np.zeros((0, len(METRIC_NAMES))))
    design = design_matrix(trajs, stage, ego, directive, params.embedding)
    return ScorerOutput(scorer_id=scorer_id, values=predict_linear(design, params))


def ridge_objective(design: FloatArray, targets: FloatArray, params: LinearScorerParams) -> float:
    """Unclipped squared error plus the ridge penalty, summed over metrics."""
    residual = np.asarray(design) @ params.coef.T + params.bias - np.asarray(targets)
    return float(np.sum(residual**2) + params.ridge_lambda * np.sum(params.coef**2))


def rank_correlation(a: FloatArray, b: FloatArray) -> float:
    """Spearman rank correlation (0.0 when either side is constant)."""
    x, y = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if x.size < 2 or np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
        return 0.0
    return float(scipy.stats.spearmanr(x, y).statistic)


# ═══════════════════════════════════════════════════════════════════════════
# Scorer objects used by the harness
# ═══════════════════════════════════════════════════════════════════════════
class Scorer(Protocol):
    scorer_id: str

    def score(self, trajs: Sequence[Trajectory], stage: ScenarioStage, evaluator: StageEvaluator) -> ScorerOutput: ...


class OracleScorer:
    """Exact metric values."""

    def __init__(self, scorer_id: str = "oracle") -> None:
        self.scorer_id = scorer_id

    def score(self, trajs: Sequence[Trajectory], stage: ScenarioStage, evaluator: StageEvaluator) -> ScorerOutput:
        return oracle_scorer(trajs, stage, evaluator=evaluator, scorer_id=self.scorer_id)


class NoisyScorer:
    """Oracle plus seeded noise."""

    def __init__(self, scorer_id: str, noise_sd: float, seed: int) -> None:
        self.scorer_id = scorer_id
        self.noise_sd = noise_sd
        self.seed = seed

    def score(self, trajs: Sequence[Trajectory], stage: ScenarioStage, evaluator: StageEvaluator) -> ScorerOutput:
        oracle = oracle_scorer(trajs, stage, evaluator=evaluator)
        return noisy_scorer(trajs, stage, self.noise_sd, self.seed, scorer_id=self.scorer_id, oracle=oracle)


class LinearScorer(LoggerMixin):
    """
    Linear heads conditioned on a directive from ``provider``.

    Args:
        scorer_id: Output id
        params: Fitted heads
        provider: Directive source; ``None`` gives the conventional scorer
    """

    def __init__(self, scorer_id: str, params: LinearScorerParams, provider: DirectiveProvider | None = None) -> None:
        self.scorer_id = scorer_id
        self.params = params
        self.provider = provider

    def score(self, trajs: Sequence[Trajectory], stage: ScenarioStage, evaluator: StageEvaluator) -> ScorerOutput:
        directive = self.provider.directive_for(stage) if self.provider is not None else None
        if directive is not None:
            self.logger.debug("linear_scorer_directive", scenario=stage.scenario_id, directive=directive.format())
        return linear_scorer(trajs, stage, stage.ego, directive, self.params, scorer_id=self.scorer_id)


def training_rows(
    trajs: Sequence[Trajectory],
    stage: ScenarioStage,
    directive: CognitiveDirective | None,
    embedding: DirectiveEmbedding,
    cfg: Settings | None = None,
) -> tuple[FloatArray, FloatArray]:
    """Design rows and oracle targets of one stage, ready for ``fit_linear_scorer``."""
    cfg = cfg or settings
    targets = oracle_scorer(trajs, stage, cfg=cfg).values
    return design_matrix(trajs, stage, stage.ego, directive, embedding), np.array(targets)
