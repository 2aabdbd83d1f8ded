"""Numerical engine: candidates, metrics, scorers, fusion, simulation and the ablation harness."""

from __future__ import annotations

from .ablation import AblationRunner, report, run_ablation
from .fusion import fuse_models, select_best
from .metrics import StageEvaluator, compose_epdms, evaluate_two_stage
from .scenario_gen import ScenarioKind, gen_scenarios
from .vlm_fusion import VlmFusioner
from .vocabulary import candidate_set, generate_anchors, generate_vocabulary

__all__ = [
    "AblationRunner",
    "ScenarioKind",
    "StageEvaluator",
    "VlmFusioner",
    "candidate_set",
    "compose_epdms",
    "evaluate_two_stage",
    "fuse_models",
    "gen_scenarios",
    "generate_anchors",
    "generate_vocabulary",
    "report",
    "run_ablation",
    "select_best",
]
