"""
Domain models for metric scores, directives, scorers and fusion.

Score containers that travel in bulk (one row per candidate) are numpy-backed
dataclasses; small configuration objects are pydantic models.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
import math
from typing import Any, Literal

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field

from ..core.exceptions import (
    DimensionMismatchError,
    InvalidParamsError,
    InvalidWeightsError,
    InvariantViolationError,
)

FloatArray = NDArray[np.float64]

METRIC_NAMES: tuple[str, ...] = ("nc", "dac", "ddc", "tlc", "ep", "ttc", "lk", "hc", "ec")
METRIC_INDEX: dict[str, int] = {name: i for i, name in enumerate(METRIC_NAMES)}

DEFAULT_PENALTIES: tuple[str, ...] = ("nc", "dac", "ddc", "tlc")
DEFAULT_WEIGHTED: dict[str, float] = {"ep": 5.0, "ttc": 5.0, "lk": 2.0, "hc": 1.0, "ec": 2.0}

TRAJECTORY_FEATURE_NAMES: tuple[str, ...] = (
    "end_x",
    "end_y",
    "end_heading",
    "curvature_mean",
    "curvature_max",
    "accel_mean",
    "accel_max",
    "arc_length",
    "min_clearance",
    "drivable_fraction",
    "lateral_offset_mean",
    "lateral_offset_std",
    "lateral_offset_min",
    "lateral_offset_max",
    "lateral_offset_final",
    "lateral_offset_abs_mean",
)
EGO_FEATURE_NAMES: tuple[str, ...] = ("ego_speed", "ego_accel", "command_left", "command_forward", "command_right")


def feature_order(embedding_dim: int) -> tuple[str, ...]:
    """Full linear-scorer feature order for a directive embedding of ``embedding_dim``."""
    return TRAJECTORY_FEATURE_NAMES + EGO_FEATURE_NAMES + tuple(f"directive_{i}" for i in range(embedding_dim))


# ═══════════════════════════════════════════════════════════════════════════
# Metrics
# ═══════════════════════════════════════════════════════════════════════════
class SubScores(BaseModel):
    """The nine EPDMS sub-metric values of one trajectory in one stage."""

    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    nc: float = Field(..., ge=0.0, le=1.0, description="No at-fault collision")
    dac: float = Field(..., ge=0.0, le=1.0, description="Drivable area compliance")
    ddc: float = Field(..., ge=0.0, le=1.0, description="Driving direction compliance")
    tlc: float = Field(..., ge=0.0, le=1.0, description="Traffic light compliance")
    ep: float = Field(..., ge=0.0, le=1.0, description="Ego progress")
    ttc: float = Field(..., ge=0.0, le=1.0, description="Time to collision")
    lk: float = Field(..., ge=0.0, le=1.0, description="Lane keeping")
    hc: float = Field(..., ge=0.0, le=1.0, description="History comfort")
    ec: float = Field(..., ge=0.0, le=1.0, description="Extended comfort")

    def as_array(self) -> FloatArray:
        """Values in ``METRIC_NAMES`` order."""
        return np.array([getattr(self, name) for name in METRIC_NAMES], dtype=np.float64)

    @classmethod
    def from_array(cls, values: Any) -> SubScores:
        arr = np.asarray(values, dtype=np.float64)
        return cls(**{name: float(arr[i]) for i, name in enumerate(METRIC_NAMES)})

    @classmethod
    def ones(cls) -> SubScores:
        return cls.from_array(np.ones(len(METRIC_NAMES)))


class MetricWeights(BaseModel):
    """
    Grouping of metrics into multiplicative penalties and a weighted mean.

    Attributes:
        penalty_set: Metrics multiplied into the score
        weighted: Metric → non-negative weight of the weighted mean
    """

    model_config = ConfigDict(frozen=True)

    penalty_set: list[str] = Field(default_factory=lambda: list(DEFAULT_PENALTIES))
    weighted: dict[str, float] = Field(default_factory=lambda: dict(DEFAULT_WEIGHTED))

    def check(self) -> None:
        """
        Validate the grouping.

        Raises:
            InvalidWeightsError: On unknown names, overlaps, gaps, negative
                or all-zero weights
        """
        names = set(METRIC_NAMES)
        penalties = set(self.penalty_set)
        weighted = set(self.weighted)
        unknown = (penalties | weighted) - names
        if unknown:
            raise InvalidWeightsError("Unknown metric names", names=sorted(unknown))
        if penalties & weighted:
            raise InvalidWeightsError("Penalty and weighted sets overlap", names=sorted(penalties & weighted))
        if (penalties | weighted) != names:
            raise InvalidWeightsError("Metric grouping must cover all nine metrics", missing=sorted(names - penalties - weighted))
        if any(not math.isfinite(w) or w < 0.0 for w in self.weighted.values()):
            raise InvalidWeightsError("Weights must be finite and non-negative")
        if sum(self.weighted.values()) <= 0.0:
            raise InvalidWeightsError("Weighted metrics need a positive total weight")

    def penalty_mask(self) -> NDArray[np.bool_]:
        return np.array([name in self.penalty_set for name in METRIC_NAMES])

    def weight_vector(self) -> FloatArray:
        return np.array([self.weighted.get(name, 0.0) for name in METRIC_NAMES], dtype=np.float64)


class EpdmsResult(BaseModel):
    """Two-stage EPDMS outcome of one planner decision on one scenario."""

    model_config = ConfigDict(frozen=True)

    stage1: SubScores
    stage2: SubScores | None = None
    stage1_epdms: float = Field(..., ge=0.0, le=1.0)
    stage2_epdms: float | None = Field(default=None, ge=0.0, le=1.0)
    epdms: float = Field(..., ge=0.0, le=1.0)


# ═══════════════════════════════════════════════════════════════════════════
# Directives
# ═══════════════════════════════════════════════════════════════════════════
class Longitudinal(str, Enum):
    """Longitudinal directive axis."""

    KEEP = "Keep"
    ACCELERATE = "Accelerate"
    DECELERATE = "Decelerate"
    STOP = "Stop"


class Lateral(str, Enum):
    """Lateral directive axis."""

    FORWARD = "Forward"
    LEFT = "Left"
    RIGHT = "Right"


LONGITUDINAL_ORDER: tuple[Longitudinal, ...] = tuple(Longitudinal)
LATERAL_ORDER: tuple[Lateral, ...] = tuple(Lateral)
DIRECTIVE_COUNT = len(LONGITUDINAL_ORDER) * len(LATERAL_ORDER)


class CognitiveDirective(BaseModel):
    """A discrete (longitudinal, lateral) driving instruction."""

    model_config = ConfigDict(frozen=True)

    longitudinal: Longitudinal
    lateral: Lateral

    @property
    def index(self) -> int:
        """Row of this directive in the embedding table (lexicographic by axis)."""
        return LONGITUDINAL_ORDER.index(self.longitudinal) * len(LATERAL_ORDER) + LATERAL_ORDER.index(self.lateral)

    @classmethod
    def from_index(cls, index: int) -> CognitiveDirective:
        lon, lat = divmod(index, len(LATERAL_ORDER))
        return cls(longitudinal=LONGITUDINAL_ORDER[lon], lateral=LATERAL_ORDER[lat])

    @classmethod
    def all(cls) -> list[CognitiveDirective]:
        """All twelve directives in table order."""
        return [cls.from_index(i) for i in range(DIRECTIVE_COUNT)]

    def format(self) -> str:
        """Human form, e.g. ``"Accelerate, Right"``."""
        return f"{self.longitudinal.value}, {self.lateral.value}"


@dataclass(frozen=True, eq=False)
class DirectiveEmbedding:
    """
    Directive embedding table: one row per directive.

    Attributes:
        table: ``(12, d)`` float array indexed by ``CognitiveDirective.index``
    """

    table: FloatArray

    def __post_init__(self) -> None:
        table = np.array(self.table, dtype=np.float64, copy=True)
        if table.ndim != 2 or table.shape[0] != DIRECTIVE_COUNT or table.shape[1] < 1:
            raise InvariantViolationError("Embedding table must have 12 rows", shape=table.shape)
        if not np.all(np.isfinite(table)):
            raise InvariantViolationError("Embedding table contains non-finite values")
        if len(np.unique(table, axis=0)) != DIRECTIVE_COUNT:
            raise InvariantViolationError("Embedding rows must be pairwise distinct")
        table.setflags(write=False)
        object.__setattr__(self, "table", table)

    @property
    def dim(self) -> int:
        return int(self.table.shape[1])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DirectiveEmbedding):
            return NotImplemented
        return np.array_equal(self.table, other.table)

    __hash__ = None  # type: ignore[assignment]


# ═══════════════════════════════════════════════════════════════════════════
# Scorers
# ═══════════════════════════════════════════════════════════════════════════
@dataclass(frozen=True, eq=False)
class ScorerOutput:
    """
    Predicted sub-scores of one scorer over a candidate list.

    Attributes:
        scorer_id: Scorer name
        values: ``(M, 9)`` array in ``METRIC_NAMES`` column order
    """

    scorer_id: str
    values: FloatArray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64, copy=True).reshape(-1, len(METRIC_NAMES))
        if not np.all(np.isfinite(values)) or np.any(values < 0.0) or np.any(values > 1.0):
            raise InvariantViolationError("Scorer outputs must lie in [0, 1]", scorer=self.scorer_id)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return int(self.values.shape[0])

    @property
    def scores(self) -> list[SubScores]:
        """One SubScores per candidate, in candidate order."""
        return [SubScores.from_array(row) for row in self.values]

    def to_dict(self) -> dict[str, Any]:
        return {"scorer_id": self.scorer_id, "scores": [s.model_dump() for s in self.scores]}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ScorerOutput:
        rows = [SubScores.model_validate(s).as_array() for s in data["scores"]]
        values = np.array(rows, dtype=np.float64).reshape(-1, len(METRIC_NAMES))
        return cls(scorer_id=str(data["scorer_id"]), values=values)


@dataclass(frozen=True, eq=False)
class LinearScorerParams:
    """
    Per-metric linear heads over ``[trajectory ‖ ego ‖ directive embedding]``.

    Attributes:
        feature_order: Column names of the design matrix
        ridge_lambda: Ridge coefficient used for fitting (≥ 0)
        bias: ``(9,)`` intercepts
        coef: ``(9, D)`` weights, rows in ``METRIC_NAMES`` order
        embedding: Directive embedding persisted with the heads
    """

    feature_order: tuple[str, ...]
    ridge_lambda: float
    bias: FloatArray
    coef: FloatArray
    embedding: DirectiveEmbedding

    def __post_init__(self) -> None:
        bias = np.array(self.bias, dtype=np.float64, copy=True)
        coef = np.array(self.coef, dtype=np.float64, copy=True)
        expected = feature_order(self.embedding.dim)
        if tuple(self.feature_order) != expected:
            raise DimensionMismatchError(
                "Feature order does not match the embedding dimension",
                expected=len(expected),
                actual=len(self.feature_order),
            )
        if bias.shape != (len(METRIC_NAMES),) or coef.shape != (len(METRIC_NAMES), len(expected)):
            raise DimensionMismatchError("Weight shapes do not match the feature order", coef=coef.shape, bias=bias.shape)
        if not (math.isfinite(self.ridge_lambda) and self.ridge_lambda >= 0.0):
            raise InvalidParamsError("Ridge lambda must be non-negative", ridge_lambda=self.ridge_lambda)
        if not (np.all(np.isfinite(bias)) and np.all(np.isfinite(coef))):
            raise InvalidParamsError("Scorer weights must be finite")
        object.__setattr__(self, "feature_order", tuple(self.feature_order))
        object.__setattr__(self, "bias", bias)
        object.__setattr__(self, "coef", coef)

    @property
    def dim(self) -> int:
        return len(self.feature_order)


# ═══════════════════════════════════════════════════════════════════════════
# Fusion
# ═══════════════════════════════════════════════════════════════════════════
def _default_log_weights() -> dict[str, float]:
    weights = {name: 1.0 for name in DEFAULT_PENALTIES}
    weights.update(DEFAULT_WEIGHTED)
    return weights


class FusionConfig(BaseModel):
    """
    Weight-fusioner configuration.

    Attributes:
        metric_log_weights: Metric → weight of its log term
        model_weights: Scorer id → weight, or ``"uniform"`` for 1/K each
        epsilon: Score floor inside the logarithm
        tie_break: Tie rule of the final argmax
        aggregation: ``log_sum`` (Σ w ln s) or ``log_epdms`` (log of the
            EPDMS composite under ``metric_weights``)
        metric_weights: Grouping used by ``log_epdms``
    """

    model_config = ConfigDict(frozen=True)

    metric_log_weights: dict[str, float] = Field(default_factory=_default_log_weights)
    model_weights: dict[str, float] | Literal["uniform"] = "uniform"
    epsilon: float = 1e-6
    tie_break: Literal["lowest_index"] = "lowest_index"
    aggregation: Literal["log_sum", "log_epdms"] = "log_sum"
    metric_weights: MetricWeights = Field(default_factory=MetricWeights)
