"""Infrastructure components: file persistence and the VLM HTTP client."""

from __future__ import annotations

from .storage import (
    load_ablation_spec,
    load_candidates,
    load_few_shot,
    load_scenarios,
    load_scorer_outputs,
    load_scorer_params,
    read_records,
    read_scenario_records,
    save_candidates,
    save_scenarios,
    save_scorer_outputs,
    save_scorer_params,
    write_records,
)
from .vlm_client import query_vlm

__all__ = [
    "load_ablation_spec",
    "load_candidates",
    "load_few_shot",
    "load_scenarios",
    "load_scorer_outputs",
    "load_scorer_params",
    "query_vlm",
    "read_records",
    "read_scenario_records",
    "save_candidates",
    "save_scenarios",
    "save_scorer_outputs",
    "save_scorer_params",
    "write_records",
]
