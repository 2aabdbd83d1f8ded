"""
VSF Planner - trajectory scoring and fusion planner evaluation.

Generates candidate trajectories, scores them with conventional and
directive-conditioned scorers, fuses the scores by log-weighted ensembling
or by an LQR-simulate/render/VLM-select loop, and evaluates the choices
under a two-stage EPDMS metric suite on synthetic scenarios.
"""

from __future__ import annotations

__version__ = "1.0.0"

from .core.config import settings
from .domain.models import Scenario, ScenarioStage, Trajectory
from .domain.scoring import EpdmsResult, FusionConfig, ScorerOutput, SubScores
from .services.ablation import run_ablation
from .services.metrics import evaluate_two_stage

__all__ = [
    "__version__",
    "settings",
    "run_ablation",
    "evaluate_two_stage",
    "EpdmsResult",
    "FusionConfig",
    "Scenario",
    "ScenarioStage",
    "ScorerOutput",
    "SubScores",
    "Trajectory",
]
