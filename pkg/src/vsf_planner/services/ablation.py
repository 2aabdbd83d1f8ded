"""
Ablation harness.

Runs every fusion configuration of an ``AblationSpec`` over a scenario
fleet and summarizes the fleet EPDMS per configuration. For every scenario
stage:

1. Generate the vocabulary (plus perturbation anchors)
2. Score the candidates with each declared scorer
3. Pick one candidate by weight fusion or VLM fusion
4. Evaluate the picks over both stages
"""

from __future__ import annotations

from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import io
from pathlib import Path
import threading
import time
from typing import Any

import httpx
from rich import box
from rich.console import Console
from rich.table import Table

from ..core.config import Settings, settings
from ..core.exceptions import DataError, VlmTransportError
from ..core.logging import LoggerMixin
from ..domain.control import FewShotExemplar, LqrConfig, RenderConfig, VlmEndpointConfig
from ..domain.harness import AblationSpec, FusionRunSpec, LinearScorerSpec, NoisyScorerSpec, RunRecord, ScorerSpec
from ..domain.models import Scenario, ScenarioStage, Trajectory
from ..domain.scoring import FusionConfig, ScorerOutput
from ..infrastructure.storage import load_few_shot, load_scorer_params, read_records, read_scenario_records, write_records
from .directive import DirectiveProvider, RuleDirectiveProvider, VlmDirectiveProvider
from .fusion import fuse_models, select_best
from .metrics import StageEvaluator, evaluate_two_stage
from .scorers import LinearScorer, NoisyScorer, OracleScorer, Scorer
from .vlm_fusion import DEFAULT_FEW_SHOT, VlmFusioner
from .vocabulary import candidate_set

RECORDS_FILE = "records.jsonl"
REPORT_FILE = "report.txt"
MISSING = "—"


def build_scorer(name: str, spec: ScorerSpec, cfg: Settings, client: httpx.Client | None = None) -> Scorer:
    """
    Instantiate a declared scorer; its output id is ``name``.

    Raises:
        MalformedFileError: If a linear scorer's parameter file is unreadable
    """
    if isinstance(spec, NoisyScorerSpec):
        return NoisyScorer(name, spec.noise_sd, spec.seed)
    if isinstance(spec, LinearScorerSpec):
        provider: DirectiveProvider | None = None
        if spec.directive_source == "rule":
            provider = RuleDirectiveProvider(cfg)
        elif spec.directive_source == "vlm":
            provider = VlmDirectiveProvider(VlmEndpointConfig.from_settings(cfg), client=client)
        return LinearScorer(name, load_scorer_params(spec.params_path), provider)
    return OracleScorer(name)


class AblationRunner(LoggerMixin):
    """
    Evaluates fusion configurations over a fleet.

    Scenarios run in a thread pool of ``cfg.jobs`` workers; records come back
    in scenario-id order, then config order, whatever the pool size.

    Args:
        spec: Ablation description (paths already resolved)
        cfg: Settings
        client: Optional HTTP client for VLM queries (tests pass a TestClient)
        few_shot: Prompt exemplars (package defaults when None)
    """

    def __init__(
        self,
        spec: AblationSpec,
        cfg: Settings | None = None,
        client: httpx.Client | None = None,
        few_shot: Sequence[FewShotExemplar] | None = None,
    ) -> None:
        self.spec = spec
        self.cfg = cfg or settings
        self.scorers = {name: build_scorer(name, s, self.cfg, client) for name, s in spec.scorers.items()}
        self.fusioner = VlmFusioner(
            VlmEndpointConfig.from_settings(self.cfg),
            fusion=spec.fusion,
            lqr=LqrConfig.from_settings(self.cfg),
            render=RenderConfig(line_width=self.cfg.render.line_width, label_scale=self.cfg.render.label_scale),
            few_shot=DEFAULT_FEW_SHOT if few_shot is None else few_shot,
            client=client,
            limiter=threading.Semaphore(self.cfg.vlm.max_in_flight),
            metric_weights=spec.fusion.metric_weights,
        )

    def run(self, scenarios: Sequence[Scenario], failures: Sequence[tuple[str, DataError]] = ()) -> list[RunRecord]:
        """
        Evaluate every config on every scenario.

        A scenario whose setup fails, or that appears in ``failures`` (records
        rejected at load time), yields one record with config ``"*"``; a config
        that fails on a scenario yields one error record for it. Any exception
        other than VLM transport exhaustion is recorded this way.

        Raises:
            VlmTransportError: If the VLM endpoint is unreachable after all
                retries; the remaining scenarios are not evaluated
        """
        self.logger.info("ablation_started", scenarios=len(scenarios), configs=len(self.spec.configs), jobs=self.cfg.jobs)
        ordered = sorted(scenarios, key=lambda s: s.id)
        if self.cfg.jobs > 1 and len(ordered) > 1:
            with ThreadPoolExecutor(max_workers=self.cfg.jobs) as pool:
                batches = list(pool.map(self.evaluate_scenario, ordered))
        else:
            batches = [self.evaluate_scenario(s) for s in ordered]
        batches += [[RunRecord(scenario_id=sid, config="*", error=str(e))] for sid, e in failures]
        batches.sort(key=lambda batch: batch[0].scenario_id if batch else "")
        records = [r for batch in batches for r in batch]
        failed = sum(1 for r in records if r.error is not None)
        self.logger.info("ablation_completed", records=len(records), errors=failed)
        return records

    # ── Per scenario ────────────────────────────────────────────────────────
    def evaluate_scenario(self, scenario: Scenario) -> list[RunRecord]:
        """All config records of one scenario."""
        try:
            stages = scenario.stages()
            candidates = [candidate_set(st.ego, self.cfg, self.spec.seed, self.spec.include_anchors) for st in stages]
            evaluators = [StageEvaluator(st, c, cfg=self.cfg) for st, c in zip(stages, candidates, strict=True)]
        except Exception as e:
            self.logger.warning("scenario_failed", scenario=scenario.id, error=_describe(e), error_type=type(e).__name__)
            return [RunRecord(scenario_id=scenario.id, config="*", error=_describe(e))]

        cache: dict[tuple[str, int], ScorerOutput] = {}
        records = []
        for config in self.spec.configs:
            started = time.perf_counter()
            try:
                record = self._evaluate_config(scenario, config, stages, candidates, evaluators, cache)
            except VlmTransportError:
                raise
            except Exception as e:
                self.logger.warning(
                    "config_failed",
                    scenario=scenario.id,
                    config=config.name,
                    error=_describe(e),
                    error_type=type(e).__name__,
                )
                record = RunRecord(scenario_id=scenario.id, config=config.name, error=_describe(e))
            if self.spec.record_timing:
                record = record.model_copy(update={"wall_time": time.perf_counter() - started})
            records.append(record)
        return records

    def _outputs(
        self,
        names: Sequence[str],
        stage: ScenarioStage,
        candidates: Sequence[Trajectory],
        evaluator: StageEvaluator,
        cache: dict[tuple[str, int], ScorerOutput],
    ) -> list[ScorerOutput]:
        outputs = []
        for name in names:
            key = (name, stage.stage_index)
            if key not in cache:
                cache[key] = self.scorers[name].score(candidates, stage, evaluator)
            outputs.append(cache[key])
        return outputs

    def _evaluate_config(
        self,
        scenario: Scenario,
        config: FusionRunSpec,
        stages: Sequence[ScenarioStage],
        candidates: Sequence[Sequence[Trajectory]],
        evaluators: Sequence[StageEvaluator],
        cache: dict[tuple[str, int], ScorerOutput],
    ) -> RunRecord:
        fusion = self.spec.fusion.model_copy(update={"model_weights": config.model_weights})
        picks: list[int] = []
        diagnostics: dict[str, Any] = {}
        for stage, cands, evaluator in zip(stages, candidates, evaluators, strict=True):
            outputs = self._outputs(config.scorers, stage, cands, evaluator, cache)
            if config.fusion == "vlm":
                selection = self._vlm_fusioner(fusion).select(stage, cands, outputs)
                picks.append(selection.index)
                diagnostics[f"stage{stage.stage_index}"] = {
                    "label": selection.label,
                    "fallback": selection.fallback,
                    **selection.diagnostics,
                }
            else:
                picks.append(select_best(fuse_models(outputs, fusion)))

        traj2 = candidates[1][picks[1]] if len(picks) > 1 else None
        result = evaluate_two_stage(
            candidates[0][picks[0]],
            traj2,
            scenario,
            weights=self.spec.fusion.metric_weights,
            evaluators=evaluators,
        )
        return RunRecord(
            scenario_id=scenario.id,
            config=config.name,
            selected_index=picks[0],
            stage1=result.stage1,
            stage2=result.stage2,
            stage1_epdms=result.stage1_epdms,
            stage2_epdms=result.stage2_epdms,
            epdms=result.epdms,
            diagnostics={"selected": picks, **diagnostics},
        )

    def _vlm_fusioner(self, fusion: FusionConfig) -> VlmFusioner:
        if fusion == self.fusioner.fusion:
            return self.fusioner
        return VlmFusioner(
            self.fusioner.endpoint,
            fusion=fusion,
            lqr=self.fusioner.lqr,
            render=self.fusioner.render,
            few_shot=self.fusioner.few_shot,
            client=self.fusioner.client,
            limiter=self.fusioner.limiter,
            metric_weights=self.fusioner.metric_weights,
        )


# ═══════════════════════════════════════════════════════════════════════════
# Report
# ═══════════════════════════════════════════════════════════════════════════
@dataclass(frozen=True)
class ReportRow:
    """
    Fleet means of one configuration (fractions, not percent).

    Attributes:
        config: Configuration name
        epdms1: Mean stage-1 EPDMS
        epdms2: Mean stage-2 EPDMS, None when no record has a stage 2
        epdms: Mean per-scenario EPDMS
        scenarios: Successful records
        errors: Error records
    """

    config: str
    epdms1: float | None
    epdms2: float | None
    epdms: float | None
    scenarios: int
    errors: int


def _describe(error: BaseException) -> str:
    return str(error) or type(error).__name__


def _mean(values: Sequence[float]) -> float | None:
    return sum(values) / len(values) if values else None


def summarize(records: Sequence[RunRecord]) -> list[ReportRow]:
    """Per-config fleet means, sorted by config name; ``"*"`` records are not a config."""
    by_config: dict[str, list[RunRecord]] = {}
    for record in records:
        if record.config != "*":
            by_config.setdefault(record.config, []).append(record)
    rows = []
    for name in sorted(by_config):
        group = by_config[name]
        ok = [r for r in group if r.ok]
        rows.append(
            ReportRow(
                config=name,
                epdms1=_mean([r.stage1_epdms for r in ok if r.stage1_epdms is not None]),
                epdms2=_mean([r.stage2_epdms for r in ok if r.stage2_epdms is not None]),
                epdms=_mean([r.epdms for r in ok if r.epdms is not None]),
                scenarios=len(ok),
                errors=len(group) - len(ok),
            )
        )
    return rows


def format_percent(value: float | None) -> str:
    """Score ×100 with two decimals, or an em dash when absent."""
    return MISSING if value is None else f"{value * 100.0:.2f}"


def render_report(rows: Sequence[ReportRow], title: str = "Ablation") -> str:
    """
    Plain-text table of ``rows``.

    Columns: Config, EPDMS I, EPDMS II, EPDMS, Scenarios, Errors. Output is
    deterministic (fixed width, no color).
    """
    table = Table(title=title, box=box.SIMPLE_HEAD, show_lines=False)
    table.add_column("Config", style="bold")
    table.add_column("EPDMS I", justify="right")
    table.add_column("EPDMS II", justify="right")
    table.add_column("EPDMS", justify="right")
    table.add_column("Scenarios", justify="right")
    table.add_column("Errors", justify="right")
    for row in rows:
        table.add_row(
            row.config,
            format_percent(row.epdms1),
            format_percent(row.epdms2),
            format_percent(row.epdms),
            str(row.scenarios),
            str(row.errors),
        )
    buffer = io.StringIO()
    Console(file=buffer, width=100, color_system=None, force_terminal=False, legacy_windows=False).print(table)
    return buffer.getvalue()


def report(records_path: Path) -> str:
    """
    Table text for a record file.

    Raises:
        MalformedRecordsError: If the file cannot be parsed
    """
    return render_report(summarize(read_records(records_path)))


# ═══════════════════════════════════════════════════════════════════════════
# Entry point
# ═══════════════════════════════════════════════════════════════════════════
def run_ablation(
    spec: AblationSpec,
    cfg: Settings | None = None,
    client: httpx.Client | None = None,
) -> tuple[list[RunRecord], str]:
    """
    Run an ablation and write ``records.jsonl`` and ``report.txt``.

    Args:
        spec: Ablation description with resolved paths
        cfg: Settings
        client: Optional HTTP client for VLM queries

    Returns:
        Records and the report text

    Raises:
        MalformedFileError: If the scenario, parameter or few-shot files are unreadable
        VlmTransportError: If the VLM endpoint is unreachable

    Example:
        >>> records, table = run_ablation(load_ablation_spec(Path("ablation.yaml")))
        >>> print(table)
    """
    cfg = cfg or settings
    loaded = read_scenario_records(spec.scenario_file, horizon=cfg.planning.horizon)
    scenarios = [item for _, item in loaded if isinstance(item, Scenario)]
    failures = [(sid, item) for sid, item in loaded if isinstance(item, DataError)]
    few_shot = load_few_shot(spec.few_shot_file) if spec.few_shot_file is not None else None
    records = AblationRunner(spec, cfg, client=client, few_shot=few_shot).run(scenarios, failures)

    table = render_report(summarize(records))
    write_records(records, spec.output_dir / RECORDS_FILE)
    (spec.output_dir / REPORT_FILE).write_text(table, encoding="utf-8")
    return records, table
