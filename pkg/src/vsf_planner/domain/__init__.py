"""Domain models and business entities."""

from __future__ import annotations

from .control import BicycleState, FewShotExemplar, LqrConfig, RenderConfig, SelectionResponse, VlmEndpointConfig
from .harness import AblationSpec, FusionRunSpec, RunRecord
from .models import (
    Agent,
    CameraModel,
    Command,
    EgoState,
    Lane,
    LightState,
    MapContext,
    Pose2D,
    Scenario,
    ScenarioStage,
    Trajectory,
    TrajectorySample,
)
from .scoring import (
    METRIC_NAMES,
    CognitiveDirective,
    DirectiveEmbedding,
    EpdmsResult,
    FusionConfig,
    Lateral,
    LinearScorerParams,
    Longitudinal,
    MetricWeights,
    ScorerOutput,
    SubScores,
)

__all__ = [
    "METRIC_NAMES",
    "AblationSpec",
    "Agent",
    "BicycleState",
    "CameraModel",
    "CognitiveDirective",
    "Command",
    "DirectiveEmbedding",
    "EgoState",
    "EpdmsResult",
    "FewShotExemplar",
    "FusionConfig",
    "FusionRunSpec",
    "Lane",
    "Lateral",
    "LightState",
    "LinearScorerParams",
    "Longitudinal",
    "LqrConfig",
    "MapContext",
    "MetricWeights",
    "Pose2D",
    "RenderConfig",
    "RunRecord",
    "Scenario",
    "ScenarioStage",
    "ScorerOutput",
    "SelectionResponse",
    "SubScores",
    "Trajectory",
    "TrajectorySample",
    "VlmEndpointConfig",
]
