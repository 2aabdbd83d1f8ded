"""
Weight fusioner: per-scorer log aggregation, cross-scorer weighting, argmax.
"""

from __future__ import annotations

from collections.abc import Sequence
import math

import numpy as np

from ..core.exceptions import EmptyCandidatesError, InvalidConfigError, InvalidWeightsError, LengthMismatchError
from ..core.logging import get_logger
from ..domain.models import FloatArray
from ..domain.scoring import METRIC_NAMES, FusionConfig, ScorerOutput, SubScores

logger = get_logger(__name__)

FusedScores = list[tuple[int, float]]


def check_fusion_config(cfg: FusionConfig) -> None:
    """
    Validate a fusion configuration.

    Raises:
        InvalidConfigError: On unknown metrics, negative or all-zero metric
            weights, non-positive model weights or an epsilon outside (0, 1)
    """
    unknown = set(cfg.metric_log_weights) - set(METRIC_NAMES)
    if unknown:
        raise InvalidConfigError("Unknown metric names in fusion weights", names=sorted(unknown))
    values = list(cfg.metric_log_weights.values())
    if any(not math.isfinite(w) or w < 0.0 for w in values):
        raise InvalidConfigError("Metric log weights must be finite and non-negative")
    if not any(w > 0.0 for w in values):
        raise InvalidConfigError("At least one metric log weight must be positive")
    if not 0.0 < cfg.epsilon < 1.0:
        raise InvalidConfigError("Epsilon must lie in (0, 1)", epsilon=cfg.epsilon)
    if isinstance(cfg.model_weights, dict) and any(
        not math.isfinite(w) or w <= 0.0 for w in cfg.model_weights.values()
    ):
        raise InvalidConfigError("Model weights must be positive")
    if cfg.aggregation == "log_epdms":
        try:
            cfg.metric_weights.check()
        except InvalidWeightsError as e:
            raise InvalidConfigError("Invalid metric grouping for log_epdms", error=str(e)) from e


def aggregate_log_batch(values: FloatArray, cfg: FusionConfig) -> FloatArray:
    """
    Log aggregate of every row of an ``(M, 9)`` score array.

    ``log_sum``: ``Σ_m w_m ln max(s_m, ε)``.
    ``log_epdms``: ``Σ_penalty ln max(s, ε) + ln max(weighted mean, ε)``,
    which is monotone in EPDMS itself.

    Raises:
        InvalidConfigError: If the configuration is invalid
    """
    check_fusion_config(cfg)
    arr = np.atleast_2d(np.asarray(values, dtype=np.float64))
    logs = np.log(np.maximum(arr, cfg.epsilon))
    if cfg.aggregation == "log_sum":
        w = np.array([cfg.metric_log_weights.get(name, 0.0) for name in METRIC_NAMES])
        return logs @ w
    grouping = cfg.metric_weights
    w = grouping.weight_vector()
    weighted = arr @ w / w.sum()
    return logs[:, grouping.penalty_mask()].sum(axis=1) + np.log(np.maximum(weighted, cfg.epsilon))


def aggregate_log(scores: SubScores, cfg: FusionConfig) -> float:
    """
    Log aggregate of one candidate's sub-scores.

    Raises:
        InvalidConfigError: If the configuration is invalid
    """
    return float(aggregate_log_batch(scores.as_array()[None, :], cfg)[0])


def resolve_model_weights(scorer_ids: Sequence[str], cfg: FusionConfig) -> FloatArray:
    """
    Weight of each scorer, in the given order.

    Raises:
        InvalidConfigError: If a scorer has no configured weight
    """
    if cfg.model_weights == "uniform":
        return np.full(len(scorer_ids), 1.0 / len(scorer_ids))
    missing = [sid for sid in scorer_ids if sid not in cfg.model_weights]
    if missing:
        raise InvalidConfigError("No model weight for scorers", scorers=missing)
    return np.array([cfg.model_weights[sid] for sid in scorer_ids], dtype=np.float64)


def fuse_models(per_scorer: Sequence[ScorerOutput], cfg: FusionConfig) -> FusedScores:
    """
    Weighted sum of per-scorer log aggregates.

    Args:
        per_scorer: Outputs over the same candidate list
        cfg: Fusion configuration

    Returns:
        ``(candidate index, fused score)`` pairs in candidate order

    Raises:
        LengthMismatchError: If outputs cover different numbers of candidates
        InvalidConfigError: On an invalid configuration or no scorers
    """
    if not per_scorer:
        raise InvalidConfigError("Fusion needs at least one scorer output")
    lengths = {len(out) for out in per_scorer}
    if len(lengths) != 1:
        raise LengthMismatchError(
            "Scorer outputs cover different candidate lists",
            lengths={out.scorer_id: len(out) for out in per_scorer},
        )
    weights = resolve_model_weights([out.scorer_id for out in per_scorer], cfg)
    fused = np.zeros(lengths.pop())
    for weight, out in zip(weights, per_scorer, strict=True):
        fused += weight * aggregate_log_batch(out.values, cfg)
    return [(i, float(v)) for i, v in enumerate(fused)]


def select_best(fused: FusedScores) -> int:
    """
    Candidate index with the highest fused score; exact ties go to the lowest index.

    Raises:
        EmptyCandidatesError: If there are no candidates
    """
    if not fused:
        raise EmptyCandidatesError("Cannot select from an empty candidate list")
    best_index, best_score = fused[0]
    for index, score in fused[1:]:
        if score > best_score or (score == best_score and index < best_index):
            best_index, best_score = index, score
    return best_index


def rank_candidates(output: ScorerOutput, cfg: FusionConfig) -> list[int]:
    """Candidate indices of one scorer, best first (stable on ties)."""
    solo = cfg.model_copy(update={"model_weights": "uniform"})
    fused = fuse_models([output], solo)
    return sorted(range(len(fused)), key=lambda i: (-fused[i][1], i))
