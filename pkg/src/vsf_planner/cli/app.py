"""
Command-line interface using Typer and Rich.

Subcommands cover the whole pipeline:
- Scenario and candidate generation
- Scorer fitting, scoring and fusion
- Ablation runs and reports
- Overlay rendering and the mock VLM server
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
import sys
from typing import Annotated, Any

import numpy as np
import orjson
from pydantic import ValidationError
from rich import box
from rich.console import Console
from rich.panel import Panel
from rich.table import Table
from rich.text import Text
import typer

from .. import __version__
from ..core.config import Settings, load_settings, settings
from ..core.exceptions import DataError, InvalidParamsError, VlmTransportError, VsfError
from ..core.logging import configure_logging, get_logger
from ..domain.control import LqrConfig, RenderConfig, VlmEndpointConfig
from ..domain.harness import LinearScorerSpec, NoisyScorerSpec, OracleScorerSpec, ScorerSpec
from ..domain.models import AnchorParams, Scenario, VocabularyParams
from ..domain.scoring import METRIC_NAMES, FusionConfig, MetricWeights, ScorerOutput
from ..infrastructure.storage import (
    CandidateKey,
    load_ablation_spec,
    load_candidates,
    load_few_shot,
    load_scenarios,
    load_scorer_outputs,
    save_candidates,
    save_scenarios,
    save_scorer_outputs,
    save_scorer_params,
)
from ..services.ablation import build_scorer, report as render_records, run_ablation
from ..services.directive import init_embedding, rule_based_directive
from ..services.fusion import fuse_models, select_best
from ..services.lqr import initial_state, track_trajectory
from ..services.metrics import StageEvaluator, compose_epdms_batch
from ..services.rendering import encode_ppm, render_overlay
from ..services.scenario_gen import ScenarioKind, gen_mixed_fleet, gen_scenarios
from ..services.scorers import fit_linear_scorer, rank_correlation, training_rows
from ..services.vlm_fusion import DEFAULT_FEW_SHOT, VlmFusioner
from ..services.vocabulary import candidate_set

app = typer.Typer(
    name="vsf",
    help="⚡ VSF Planner - score, fuse and evaluate candidate trajectories",
    add_completion=False,
    no_args_is_help=True,
    rich_markup_mode="rich",
)
console = Console()
err_console = Console(stderr=True)

# base of the usage errors typer raises, whether click is vendored or not
UsageErrorBase: type[Exception] = next(c for c in typer.BadParameter.__mro__ if c.__name__ == "ClickException")

logger = get_logger(__name__)


@dataclass
class _State:
    """Settings resolved by the global options."""

    cfg: Settings = field(default_factory=lambda: settings)


state = _State()


class KindChoice(str, Enum):
    """Scenario kinds accepted on the command line."""

    STRAIGHT_CLEAR = "StraightClear"
    LEAD_BRAKE = "LeadBrake"
    RED_LIGHT = "RedLight"
    CURVE_LANE_KEEP = "CurveLaneKeep"
    CROSS_TRAFFIC = "CrossTraffic"
    MIXED = "mixed"


class ScorerKind(str, Enum):
    ORACLE = "oracle"
    NOISY = "noisy"
    LINEAR = "linear"


class DirectiveSource(str, Enum):
    RULE = "rule"
    VLM = "vlm"
    NONE = "none"


class Aggregation(str, Enum):
    LOG_SUM = "log_sum"
    LOG_EPDMS = "log_epdms"


def print_banner() -> None:
    """Display welcome banner."""
    banner = Text.assemble(
        ("⚡ VSF PLANNER\n", "bold"),
        ("Vocabulary, scorers and fusion on synthetic driving scenes", "dim"),
    )
    console.print(Panel(banner, style="bold blue", border_style="blue", expand=False))


def _ok(message: str) -> None:
    console.print(f"[green]✅[/green] {message}")


def _scenario_index(scenarios: list[Scenario]) -> dict[str, Scenario]:
    return {s.id: s for s in scenarios}


def _lookup(index: dict[str, Scenario], key: CandidateKey) -> Scenario:
    scenario = index.get(key[0])
    if scenario is None:
        raise InvalidParamsError("Candidate entry references an unknown scenario", id=key[0])
    return scenario


def _parse_weights(values: list[str] | None) -> dict[str, float] | str:
    """``name=weight`` pairs, or ``"uniform"`` when none are given."""
    if not values:
        return "uniform"
    weights: dict[str, float] = {}
    for item in values:
        name, sep, raw = item.partition("=")
        if not sep or not name:
            raise typer.BadParameter(f"expected NAME=WEIGHT, got {item!r}", param_hint="--weight")
        try:
            weights[name] = float(raw)
        except ValueError as e:
            raise typer.BadParameter(f"weight of {name!r} is not a number", param_hint="--weight") from e
    return weights


# ═══════════════════════════════════════════════════════════════════════════
# Global options
# ═══════════════════════════════════════════════════════════════════════════
@app.callback()
def callback(
    config: Annotated[
        Path | None,
        typer.Option("--config", "-c", help="YAML settings file", exists=True, dir_okay=False),
    ] = None,
    seed: Annotated[int | None, typer.Option("--seed", help="Global RNG seed", min=0)] = None,
    jobs: Annotated[int | None, typer.Option("--jobs", "-j", help="Worker pool size", min=1, max=64)] = None,
    verbose: Annotated[bool, typer.Option("--verbose", "-v", help="Debug logging")] = False,
) -> None:
    """⚡ VSF Planner command-line interface."""
    state.cfg = load_settings(config, seed=seed, jobs=jobs, log_level="DEBUG" if verbose else None)
    configure_logging(state.cfg)


# ═══════════════════════════════════════════════════════════════════════════
# Generation
# ═══════════════════════════════════════════════════════════════════════════
@app.command("gen-scenarios")
def gen_scenarios_command(
    kind: Annotated[KindChoice, typer.Option("--kind", "-k", help="Scenario family, or 'mixed' for all")],
    out: Annotated[Path, typer.Option("--out", "-o", help="Scenario file to write")],
    count: Annotated[int, typer.Option("--count", "-n", help="Scenarios (per kind for 'mixed')", min=1)] = 10,
) -> None:
    """Generate a synthetic scenario file."""
    cfg = state.cfg
    if kind is KindChoice.MIXED:
        scenarios = gen_mixed_fleet(count, cfg.seed, cfg)
    else:
        scenarios = gen_scenarios(ScenarioKind(kind.value), count, cfg.seed, cfg)
    save_scenarios(scenarios, out)
    _ok(f"Wrote {len(scenarios)} scenarios to [cyan]{out}[/cyan]")


@app.command("gen-vocab")
def gen_vocab_command(
    scenarios_path: Annotated[Path, typer.Argument(help="Scenario file", exists=True, dir_okay=False)],
    out: Annotated[Path, typer.Option("--out", "-o", help="Candidate file to write")],
    anchors: Annotated[bool, typer.Option("--anchors/--no-anchors", help="Append perturbation anchors")] = True,
) -> None:
    """Generate the candidate set of every scenario stage."""
    cfg = state.cfg
    scenarios = load_scenarios(scenarios_path, horizon=cfg.planning.horizon)
    candidates = {
        (s.id, st.stage_index): candidate_set(st.ego, cfg, cfg.seed, include_anchors=anchors)
        for s in scenarios
        for st in s.stages()
    }
    params: dict[str, Any] = {"vocabulary": VocabularyParams.from_settings(cfg).model_dump(mode="json")}
    if anchors:
        params["anchors"] = AnchorParams.from_settings(cfg, rng_seed=cfg.seed).model_dump(mode="json")
    save_candidates(candidates, out, params)
    sizes = {len(c) for c in candidates.values()}
    _ok(f"Wrote {len(candidates)} candidate sets ({', '.join(map(str, sorted(sizes))) or 0} each) to [cyan]{out}[/cyan]")


# ═══════════════════════════════════════════════════════════════════════════
# Scorers
# ═══════════════════════════════════════════════════════════════════════════
@app.command("fit-scorer")
def fit_scorer_command(
    scenarios_path: Annotated[Path, typer.Argument(help="Training scenario file", exists=True, dir_okay=False)],
    out: Annotated[Path, typer.Option("--out", "-o", help="Parameter file to write")],
    ridge_lambda: Annotated[float, typer.Option("--lambda", help="Ridge penalty", min=0.0)] = 1.0,
    directive: Annotated[
        DirectiveSource, typer.Option("--directive", help="Directive source for the embedding block")
    ] = DirectiveSource.RULE,
    anchors: Annotated[bool, typer.Option("--anchors/--no-anchors", help="Train on anchors too")] = False,
) -> None:
    """Fit a linear scorer on oracle labels."""
    cfg = state.cfg
    if directive is DirectiveSource.VLM:
        raise typer.BadParameter("training uses the rule or none directive source", param_hint="--directive")
    scenarios = load_scenarios(scenarios_path, horizon=cfg.planning.horizon)
    embedding = init_embedding(cfg.directive.embedding_dim, cfg.directive.embedding_seed)

    designs, targets = [], []
    for scenario in scenarios:
        for stage in scenario.stages():
            trajs = candidate_set(stage.ego, cfg, cfg.seed, include_anchors=anchors)
            cue = rule_based_directive(stage, cfg) if directive is DirectiveSource.RULE else None
            x, y = training_rows(trajs, stage, cue, embedding, cfg)
            designs.append(x)
            targets.append(y)
    if not designs:
        raise InvalidParamsError("No training stages in the scenario file", path=str(scenarios_path))

    X, Y = np.vstack(designs), np.vstack(targets)
    params = fit_linear_scorer(X, Y, ridge_lambda, embedding)
    save_scorer_params(params, out)

    predicted = np.clip(X @ params.coef.T + params.bias, 0.0, 1.0)
    table = Table(title="In-sample fit", box=box.ROUNDED, show_header=True, header_style="bold cyan")
    table.add_column("Metric", style="cyan")
    table.add_column("Spearman ρ", justify="right")
    for i, name in enumerate(METRIC_NAMES):
        table.add_row(name, f"{rank_correlation(predicted[:, i], Y[:, i]):.3f}")
    console.print(table)
    _ok(f"Fitted on {X.shape[0]} rows; parameters written to [cyan]{out}[/cyan]")


@app.command("score")
def score_command(
    scenarios_path: Annotated[Path, typer.Argument(help="Scenario file", exists=True, dir_okay=False)],
    candidates_path: Annotated[Path, typer.Argument(help="Candidate file", exists=True, dir_okay=False)],
    out: Annotated[Path, typer.Option("--out", "-o", help="Scorer-output file to write")],
    scorer: Annotated[ScorerKind, typer.Option("--scorer", "-s", help="Scorer kind")] = ScorerKind.ORACLE,
    scorer_id: Annotated[str | None, typer.Option("--id", help="Output scorer id (defaults to the kind)")] = None,
    noise_sd: Annotated[float, typer.Option("--noise-sd", help="Noisy scorer standard deviation", min=0.0)] = 0.1,
    scorer_seed: Annotated[int, typer.Option("--scorer-seed", help="Noisy scorer seed", min=0)] = 0,
    params_path: Annotated[
        Path | None, typer.Option("--params", help="Linear scorer parameter file", exists=True, dir_okay=False)
    ] = None,
    directive: Annotated[
        DirectiveSource, typer.Option("--directive", help="Linear scorer directive source")
    ] = DirectiveSource.RULE,
    records: Annotated[
        Path | None, typer.Option("--records", help="Also write one JSON line per candidate with its EPDMS")
    ] = None,
) -> None:
    """Score candidate sets; one output entry per scenario stage."""
    cfg = state.cfg
    spec: ScorerSpec
    if scorer is ScorerKind.NOISY:
        spec = NoisyScorerSpec(noise_sd=noise_sd, seed=scorer_seed)
    elif scorer is ScorerKind.LINEAR:
        if params_path is None:
            raise typer.BadParameter("the linear scorer needs --params", param_hint="--params")
        spec = LinearScorerSpec(params_path=params_path, directive_source=directive.value)
    else:
        spec = OracleScorerSpec()
    instance = build_scorer(scorer_id or scorer.value, spec, cfg)

    index = _scenario_index(load_scenarios(scenarios_path, horizon=cfg.planning.horizon))
    outputs: dict[CandidateKey, ScorerOutput] = {}
    lines: list[bytes] = []
    for key, trajs in load_candidates(candidates_path).items():
        stage = _lookup(index, key).stage(key[1])
        output = instance.score(trajs, stage, StageEvaluator(stage, trajs, cfg=cfg))
        outputs[key] = output
        epdms = compose_epdms_batch(output.values, MetricWeights()) if len(output) else np.zeros(0)
        for i, (row, value) in enumerate(zip(output.scores, epdms, strict=True)):
            line = {"scenario_id": key[0], "stage": key[1], "index": i, "scores": row.model_dump(), "epdms": float(value)}
            lines.append(orjson.dumps(line, option=orjson.OPT_SORT_KEYS))
    save_scorer_outputs(outputs, out)
    if records is not None:
        records.write_bytes(b"".join(line + b"\n" for line in lines))
    _ok(f"Scored {len(outputs)} candidate sets with [bold]{scorer_id or scorer.value}[/bold]")


# ═══════════════════════════════════════════════════════════════════════════
# Fusion
# ═══════════════════════════════════════════════════════════════════════════
@app.command("fuse")
def fuse_command(
    outputs_paths: Annotated[list[Path], typer.Argument(help="Scorer-output files", exists=True, dir_okay=False)],
    vlm: Annotated[bool, typer.Option("--vlm", help="Select through the VLM fusioner")] = False,
    weights: Annotated[
        list[str] | None, typer.Option("--weight", "-w", help="Model weight NAME=WEIGHT (repeatable)")
    ] = None,
    aggregation: Annotated[Aggregation, typer.Option("--aggregation", help="Per-scorer log aggregation")] = Aggregation.LOG_SUM,
    scenarios_path: Annotated[
        Path | None, typer.Option("--scenarios", help="Scenario file (required with --vlm)", exists=True, dir_okay=False)
    ] = None,
    candidates_path: Annotated[
        Path | None, typer.Option("--candidates", help="Candidate file (required with --vlm)", exists=True, dir_okay=False)
    ] = None,
    few_shot_path: Annotated[
        Path | None, typer.Option("--few-shot", help="Few-shot exemplar YAML", exists=True, dir_okay=False)
    ] = None,
    out: Annotated[Path | None, typer.Option("--out", "-o", help="Selection file to write")] = None,
) -> None:
    """Fuse one or more scorer outputs and pick a candidate per scenario stage."""
    cfg = state.cfg
    fusion = FusionConfig(
        model_weights=_parse_weights(weights),
        aggregation=aggregation.value,
    )
    per_file = [load_scorer_outputs(path) for path in outputs_paths]
    keys = sorted(set.intersection(*(set(o) for o in per_file)))

    fusioner: VlmFusioner | None = None
    index: dict[str, Scenario] = {}
    candidates: dict[CandidateKey, list[Any]] = {}
    if vlm:
        if scenarios_path is None or candidates_path is None:
            raise typer.BadParameter("--vlm needs --scenarios and --candidates", param_hint="--vlm")
        index = _scenario_index(load_scenarios(scenarios_path, horizon=cfg.planning.horizon))
        candidates = load_candidates(candidates_path)
        fusioner = VlmFusioner(
            VlmEndpointConfig.from_settings(cfg),
            fusion=fusion,
            lqr=LqrConfig.from_settings(cfg),
            render=RenderConfig(line_width=cfg.render.line_width, label_scale=cfg.render.label_scale),
            few_shot=load_few_shot(few_shot_path) if few_shot_path else DEFAULT_FEW_SHOT,
        )

    table = Table(title="Selections", box=box.ROUNDED, show_header=True, header_style="bold cyan")
    table.add_column("Scenario", style="cyan")
    table.add_column("Stage", justify="right")
    table.add_column("Selected", justify="right", style="green")
    table.add_column("Detail")

    entries = []
    for key in keys:
        outputs = [o[key] for o in per_file]
        if fusioner is not None:
            stage = _lookup(index, key).stage(key[1])
            trajs = candidates.get(key)
            if trajs is None:
                raise InvalidParamsError("No candidates for scenario stage", id=key[0], stage=key[1])
            selection = fusioner.select(stage, trajs, outputs)
            entry = {
                "scenario_id": key[0],
                "stage": key[1],
                "selected_index": selection.index,
                "label": selection.label,
                "fallback": selection.fallback,
                "diagnostics": selection.diagnostics,
            }
            detail = f"{selection.label}{' (fallback)' if selection.fallback else ''}"
        else:
            fused = fuse_models(outputs, fusion)
            best = select_best(fused)
            entry = {
                "scenario_id": key[0],
                "stage": key[1],
                "selected_index": best,
                "fused": [score for _, score in fused],
            }
            detail = f"{fused[best][1]:.4f}"
        entries.append(entry)
        table.add_row(key[0], str(key[1]), str(entry["selected_index"]), detail)

    console.print(table)
    if out is not None:
        out.write_bytes(orjson.dumps({"entries": entries}, option=orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY))
        _ok(f"Wrote {len(entries)} selections to [cyan]{out}[/cyan]")


# ═══════════════════════════════════════════════════════════════════════════
# Ablation
# ═══════════════════════════════════════════════════════════════════════════
@app.command("ablate")
def ablate_command(
    spec_path: Annotated[Path, typer.Argument(help="Ablation spec YAML", exists=True, dir_okay=False)],
) -> None:
    """Run every fusion configuration of an ablation spec."""
    cfg = state.cfg
    spec = load_ablation_spec(spec_path)
    records, table = run_ablation(spec, cfg)
    console.print(table, end="", highlight=False, markup=False)
    errors = sum(1 for r in records if r.error is not None)
    _ok(f"{len(records)} records ({errors} errors) in [cyan]{spec.output_dir}[/cyan]")


@app.command("report")
def report_command(
    records_path: Annotated[Path, typer.Argument(help="Records file (JSON Lines)", exists=True, dir_okay=False)],
) -> None:
    """Summarize a records file as a table."""
    console.print(render_records(records_path), end="", highlight=False, markup=False)


# ═══════════════════════════════════════════════════════════════════════════
# Rendering and the mock server
# ═══════════════════════════════════════════════════════════════════════════
@app.command("render")
def render_command(
    scenarios_path: Annotated[Path, typer.Argument(help="Scenario file", exists=True, dir_okay=False)],
    candidates_path: Annotated[Path, typer.Argument(help="Candidate file", exists=True, dir_okay=False)],
    scenario_id: Annotated[str, typer.Option("--scenario", help="Scenario id")],
    out: Annotated[Path, typer.Option("--out", "-o", help="PPM file to write")],
    stage_index: Annotated[int, typer.Option("--stage", help="Stage (1 or 2)", min=1, max=2)] = 1,
    indices: Annotated[list[int] | None, typer.Option("--index", "-i", help="Candidate index (repeatable)")] = None,
    simulate: Annotated[bool, typer.Option("--simulate/--no-simulate", help="Draw LQR rollouts")] = True,
) -> None:
    """Render labelled candidates over the front-camera view."""
    cfg = state.cfg
    index = _scenario_index(load_scenarios(scenarios_path, horizon=cfg.planning.horizon))
    key = (scenario_id, stage_index)
    trajs = load_candidates(candidates_path).get(key)
    if trajs is None:
        raise InvalidParamsError("No candidates for scenario stage", id=scenario_id, stage=stage_index)
    stage = _lookup(index, key).stage(stage_index)

    picks = indices or [0]
    lqr = LqrConfig.from_settings(cfg)
    labelled = []
    for n, i in enumerate(picks):
        if not 0 <= i < len(trajs):
            raise InvalidParamsError("Candidate index out of range", index=i, candidates=len(trajs))
        traj = trajs[i]
        if simulate:
            traj = track_trajectory(traj, initial_state(traj), lqr).simulated
        labelled.append((chr(ord("A") + n), traj))

    image = render_overlay(stage, labelled, RenderConfig(line_width=cfg.render.line_width, label_scale=cfg.render.label_scale))
    out.write_bytes(encode_ppm(image))
    _ok(f"Rendered {len(labelled)} candidates to [cyan]{out}[/cyan]")


@app.command("serve-mock-vlm")
def serve_mock_vlm_command(
    policy: Annotated[str, typer.Option("--policy", "-p", help="first | fixed:<letter> | highest-score")] = "first",
    host: Annotated[str, typer.Option("--host", "-h", help="Host to bind to")] = "127.0.0.1",
    port: Annotated[int, typer.Option("--port", help="Port to bind to", min=1, max=65535)] = 8765,
) -> None:
    """Start the mock VLM server."""
    from ..web.app import serve

    console.print(
        Panel(
            f"[bold]Mock VLM[/bold] on [cyan]http://{host}:{port}/v1/chat/completions[/cyan]\n"
            f"[dim]Policy: {policy}  ·  Press CTRL+C to stop[/dim]",
            border_style="blue",
            expand=False,
        )
    )
    serve(policy, host=host, port=port)


# ═══════════════════════════════════════════════════════════════════════════
# Info
# ═══════════════════════════════════════════════════════════════════════════
@app.command()
def version() -> None:
    """Show version information."""
    print_banner()
    console.print(f"[bold]Version:[/bold] {__version__}")
    console.print(f"[bold]Python:[/bold] {sys.version.split()[0]}")


@app.command()
def config() -> None:
    """Show the effective configuration."""
    cfg = state.cfg
    table = Table(title="⚙️  Configuration", box=box.ROUNDED, show_header=True, header_style="bold cyan")
    table.add_column("Setting", style="cyan")
    table.add_column("Value", style="green")

    table.add_row("Environment", cfg.environment)
    table.add_row("Seed", str(cfg.seed))
    table.add_row("Jobs", str(cfg.jobs))
    table.add_row("Horizon / dt", f"{cfg.planning.horizon} s / {cfg.planning.dt} s")
    table.add_row("VLM Endpoint", cfg.effective_vlm_endpoint)
    table.add_row("VLM Model", cfg.vlm.model_name)
    table.add_row("VLM API Key", "set" if cfg.effective_vlm_api_key else "not set")
    table.add_row("Log Level", cfg.log_level)
    table.add_row("Log Format", cfg.log_format)
    console.print(table)


# ═══════════════════════════════════════════════════════════════════════════
# Entry point
# ═══════════════════════════════════════════════════════════════════════════
def main(argv: list[str] | None = None) -> int:
    """
    Run the CLI and map failures to exit codes.

    Exit codes: 0 success, 1 usage, 2 data error, 3 VLM transport error.
    """
    try:
        result = app(args=argv, prog_name="vsf", standalone_mode=False)
    except UsageErrorBase as e:
        e.show(file=sys.stderr)  # type: ignore[attr-defined]
        return 1
    except typer.Abort:
        err_console.print("[yellow]Aborted[/yellow]")
        return 1
    except KeyboardInterrupt:
        err_console.print("\n[yellow]⚠️  Interrupted by user[/yellow]")
        return 130
    except VlmTransportError as e:
        err_console.print(f"[red]❌ VLM transport error:[/red] {e}")
        return 3
    except DataError as e:
        err_console.print(f"[red]❌ Data error:[/red] {e}")
        return 2
    except ValidationError as e:
        err_console.print(f"[red]❌ Invalid input:[/red] {e}")
        return 2
    except VsfError as e:
        err_console.print(f"[red]❌ Error:[/red] {e}")
        return 1
    return result if isinstance(result, int) else 0


if __name__ == "__main__":
    sys.exit(main())
