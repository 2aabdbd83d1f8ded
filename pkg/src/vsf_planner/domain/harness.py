"""
Domain models for the ablation harness: run specifications and records.
"""

from __future__ import annotations

from pathlib import Path
from typing import Annotated, Any, Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .scoring import FusionConfig, SubScores


class OracleScorerSpec(BaseModel):
    """Scorer returning the exact metric values."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["oracle"] = "oracle"


class NoisyScorerSpec(BaseModel):
    """Oracle plus seeded Gaussian noise; stands in for a weaker backbone."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["noisy"] = "noisy"
    noise_sd: float = Field(..., ge=0.0)
    seed: int = Field(default=0, ge=0)


class LinearScorerSpec(BaseModel):
    """Linear heads loaded from a parameter file."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["linear"] = "linear"
    params_path: Path
    directive_source: Literal["rule", "vlm", "none"] = "rule"


ScorerSpec = Annotated[OracleScorerSpec | NoisyScorerSpec | LinearScorerSpec, Field(discriminator="kind")]


class FusionRunSpec(BaseModel):
    """
    One row of the ablation table.

    Attributes:
        name: Row label
        fusion: ``weight`` (log-weighted argmax) or ``vlm`` (simulate, render, ask)
        scorers: Names of declared scorers taking part
        model_weights: Per-scorer weights or ``"uniform"``
    """

    model_config = ConfigDict(frozen=True)

    name: str = Field(..., min_length=1)
    fusion: Literal["weight", "vlm"] = "weight"
    scorers: list[str] = Field(..., min_length=1)
    model_weights: dict[str, float] | Literal["uniform"] = "uniform"


class AblationSpec(BaseModel):
    """
    Ablation run description (YAML).

    Attributes:
        scenario_file: Scenario file to evaluate
        output_dir: Directory receiving ``records.jsonl`` and ``report.txt``
        seed: Seed of the perturbation anchors
        scorers: Declared scorers by name
        configs: Fusion rows to compare
        fusion: Shared weight-fusioner configuration
        include_anchors: Append perturbation anchors to the vocabulary
        few_shot_file: Optional YAML list of prompt exemplars
        record_timing: Store wall time on records (breaks byte-stability)
    """

    model_config = ConfigDict(frozen=True)

    scenario_file: Path
    output_dir: Path
    seed: int = Field(default=0, ge=0)
    scorers: dict[str, ScorerSpec] = Field(..., min_length=1)
    configs: list[FusionRunSpec] = Field(default_factory=list)
    fusion: FusionConfig = Field(default_factory=FusionConfig)
    include_anchors: bool = True
    few_shot_file: Path | None = None
    record_timing: bool = False

    @model_validator(mode="after")
    def validate_references(self) -> AblationSpec:
        """Every row must reference declared scorers; row names are unique."""
        names = [c.name for c in self.configs]
        if len(set(names)) != len(names):
            raise ValueError("config names must be unique")
        for config in self.configs:
            unknown = [s for s in config.scorers if s not in self.scorers]
            if unknown:
                raise ValueError(f"config {config.name!r} references undeclared scorers {unknown}")
        return self

    def resolve_paths(self, base: Path) -> AblationSpec:
        """Return a copy with relative paths anchored at ``base``."""

        def anchor(p: Path | None) -> Path | None:
            return p if p is None or p.is_absolute() else base / p

        scorers = {
            name: spec.model_copy(update={"params_path": anchor(spec.params_path)})
            if isinstance(spec, LinearScorerSpec)
            else spec
            for name, spec in self.scorers.items()
        }
        return self.model_copy(
            update={
                "scenario_file": anchor(self.scenario_file),
                "output_dir": anchor(self.output_dir),
                "few_shot_file": anchor(self.few_shot_file),
                "scorers": scorers,
            }
        )


class RunRecord(BaseModel):
    """
    Outcome of one (scenario, config) evaluation.

    A record with ``error`` set carries no scores; config ``"*"`` marks a
    scenario-level failure.
    """

    model_config = ConfigDict(frozen=True)

    scenario_id: str
    config: str
    selected_index: int | None = None
    stage1: SubScores | None = None
    stage2: SubScores | None = None
    stage1_epdms: float | None = None
    stage2_epdms: float | None = None
    epdms: float | None = None
    wall_time: float | None = None
    error: str | None = None
    diagnostics: dict[str, Any] = Field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.error is None and self.epdms is not None
