"""
File persistence.

- Scenario, candidate and scorer-output files: UTF-8 JSON (orjson)
- Scorer parameters, few-shot exemplars and ablation specs: YAML
- Run records: JSON Lines with sorted keys

pydantic ``ValidationError``s are translated here: structural problems
become ``MalformedFileError`` and violated invariants
``InvariantViolationError``.
"""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import Any

import numpy as np
import orjson
from pydantic import TypeAdapter, ValidationError
import yaml

from ..core.exceptions import DataError, InvariantViolationError, MalformedFileError, MalformedRecordsError
from ..core.logging import get_logger
from ..domain.control import FewShotExemplar
from ..domain.harness import AblationSpec, RunRecord
from ..domain.models import Scenario, Trajectory
from ..domain.scoring import METRIC_NAMES, DirectiveEmbedding, LinearScorerParams, ScorerOutput

logger = get_logger(__name__)

# Error types that mean "the document has the wrong shape" rather than "a value breaks a rule".
_STRUCTURAL_ERRORS = frozenset(
    {
        "missing",
        "extra_forbidden",
        "model_type",
        "model_attributes_type",
        "dict_type",
        "list_type",
        "tuple_type",
        "float_type",
        "float_parsing",
        "int_type",
        "int_parsing",
        "string_type",
        "bool_type",
        "enum",
        "literal_error",
        "json_invalid",
        "too_short",
        "too_long",
    }
)

JSON_OPTIONS = orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY
RECORD_OPTIONS = orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY


def _locus(loc: Sequence[int | str]) -> str:
    return ".".join(str(part) for part in loc) or "<root>"


def translate_validation_error(e: ValidationError, path: Path, record_id: str | None = None) -> MalformedFileError | InvariantViolationError:
    """Map a pydantic error onto the data error taxonomy, keeping the first failing field."""
    first = e.errors()[0]
    field = _locus(first["loc"])
    context: dict[str, Any] = {"path": str(path), "field": field}
    if record_id is not None:
        context["id"] = record_id
    if first["type"] in _STRUCTURAL_ERRORS:
        return MalformedFileError(f"Malformed field: {first['msg']}", **context)
    return InvariantViolationError(f"Invalid value: {first['msg']}", **context)


def _read_json(path: Path) -> Any:
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise MalformedFileError("Cannot read file", path=str(path), error=str(e)) from e
    try:
        return orjson.loads(raw)
    except orjson.JSONDecodeError as e:
        raise MalformedFileError("Invalid JSON", path=str(path), line=e.lineno, column=e.colno, error=e.msg) from e


def _write_json(data: Any, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(orjson.dumps(data, option=JSON_OPTIONS) + b"\n")


def _read_yaml(path: Path) -> Any:
    try:
        return yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise MalformedFileError("Cannot read file", path=str(path), error=str(e)) from e
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise MalformedFileError("Invalid YAML", path=str(path), line=line, error=str(e)) from e


def _write_yaml(data: Any, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(data, sort_keys=False, allow_unicode=True), encoding="utf-8")


# ═══════════════════════════════════════════════════════════════════════════
# Scenarios
# ═══════════════════════════════════════════════════════════════════════════
def read_scenario_records(path: Path, horizon: float | None = None) -> list[tuple[str, Scenario | DataError]]:
    """
    Validate every scenario record independently.

    Args:
        path: JSON file holding a list of scenario records
        horizon: When given, every agent track must cover ``[0, horizon]``

    Returns:
        ``(id, scenario or the error it raised)`` per record, in file order

    Raises:
        MalformedFileError: If the file itself cannot be parsed as a list
    """
    data = _read_json(path)
    if not isinstance(data, list):
        raise MalformedFileError("Scenario file must contain a list", path=str(path), field="<root>")

    results: list[tuple[str, Scenario | DataError]] = []
    seen: set[str] = set()
    for i, record in enumerate(data):
        record_id = str(record.get("id", f"#{i}")) if isinstance(record, dict) else f"#{i}"
        try:
            scenario = Scenario.model_validate(record)
        except ValidationError as e:
            error = translate_validation_error(e, path, record_id)
            error.context["field"] = f"{i}.{error.context['field']}"
            results.append((record_id, error))
            continue
        try:
            if scenario.id in seen:
                raise InvariantViolationError("Duplicate scenario id", path=str(path), id=scenario.id, field="id")
            if horizon is not None:
                _check_coverage(scenario, horizon, path)
        except DataError as e:
            results.append((record_id, e))
            continue
        seen.add(scenario.id)
        results.append((scenario.id, scenario))
    return results


def load_scenarios(path: Path, horizon: float | None = None) -> list[Scenario]:
    """
    Read a scenario file.

    Args:
        path: JSON file holding a list of scenario records
        horizon: When given, every agent track must cover ``[0, horizon]``

    Returns:
        Scenarios in file order

    Raises:
        MalformedFileError: On parse failures or wrong structure (with locus)
        InvariantViolationError: On invariant violations (names id and field)
    """
    scenarios: list[Scenario] = []
    for _, item in read_scenario_records(path, horizon):
        if isinstance(item, DataError):
            raise item
        scenarios.append(item)
    logger.debug("scenarios_loaded", path=str(path), count=len(scenarios))
    return scenarios


def _check_coverage(scenario: Scenario, horizon: float, path: Path) -> None:
    for stage in scenario.stages():
        for agent in stage.agents:
            if not agent.covers(0.0, horizon):
                raise InvariantViolationError(
                    "Agent track does not cover the scoring horizon",
                    path=str(path),
                    id=scenario.id,
                    field=f"agents.{agent.id}.track",
                    stage=stage.stage_index,
                )


def save_scenarios(scenarios: Iterable[Scenario], path: Path) -> None:
    """Write scenarios; reloading reproduces every finite value bit-for-bit."""
    _write_json([s.model_dump(mode="json") for s in scenarios], path)


# ═══════════════════════════════════════════════════════════════════════════
# Candidate sets
# ═══════════════════════════════════════════════════════════════════════════
CandidateKey = tuple[str, int]


def save_candidates(candidates: dict[CandidateKey, list[Trajectory]], path: Path, params: dict[str, Any] | None = None) -> None:
    """
    Write per-stage candidate lists.

    The document holds a ``params`` echo block and one entry per
    ``(scenario_id, stage)`` with trajectories in the scenario-file schema.
    """
    entries = [
        {"scenario_id": sid, "stage": stage, "trajectories": [t.to_dict() for t in trajs]}
        for (sid, stage), trajs in candidates.items()
    ]
    _write_json({"params": params or {}, "entries": entries}, path)


def load_candidates(path: Path) -> dict[CandidateKey, list[Trajectory]]:
    """
    Read a candidate file written by ``save_candidates``.

    Raises:
        MalformedFileError: On wrong structure
        InvariantViolationError: On invalid trajectories
    """
    data = _read_json(path)
    if not isinstance(data, dict) or not isinstance(data.get("entries"), list):
        raise MalformedFileError("Candidate file needs an 'entries' list", path=str(path), field="entries")
    out: dict[CandidateKey, list[Trajectory]] = {}
    for i, entry in enumerate(data["entries"]):
        try:
            key = (str(entry["scenario_id"]), int(entry["stage"]))
            trajs = [Trajectory.from_dict(t) for t in entry["trajectories"]]
        except (KeyError, TypeError) as e:
            raise MalformedFileError("Malformed candidate entry", path=str(path), field=f"entries.{i}", error=str(e)) from e
        except InvariantViolationError as e:
            e.context.update(path=str(path), id=entry.get("scenario_id"))
            raise
        out[key] = trajs
    return out


# ═══════════════════════════════════════════════════════════════════════════
# Scorer outputs
# ═══════════════════════════════════════════════════════════════════════════
def save_scorer_outputs(outputs: dict[CandidateKey, ScorerOutput], path: Path) -> None:
    """Write one scorer's outputs for many scenario stages."""
    entries = [{"scenario_id": sid, "stage": stage, **out.to_dict()} for (sid, stage), out in outputs.items()]
    _write_json({"entries": entries}, path)


def load_scorer_outputs(path: Path) -> dict[CandidateKey, ScorerOutput]:
    """
    Read a scorer-output file.

    Raises:
        MalformedFileError: On wrong structure
        InvariantViolationError: On scores outside [0, 1]
    """
    data = _read_json(path)
    if not isinstance(data, dict) or not isinstance(data.get("entries"), list):
        raise MalformedFileError("Scorer-output file needs an 'entries' list", path=str(path), field="entries")
    out: dict[CandidateKey, ScorerOutput] = {}
    for i, entry in enumerate(data["entries"]):
        try:
            out[(str(entry["scenario_id"]), int(entry["stage"]))] = ScorerOutput.from_dict(entry)
        except (KeyError, TypeError) as e:
            raise MalformedFileError("Malformed scorer-output entry", path=str(path), field=f"entries.{i}", error=str(e)) from e
        except ValidationError as e:
            raise translate_validation_error(e, path, str(entry.get("scenario_id"))) from e
    return out


# ═══════════════════════════════════════════════════════════════════════════
# Scorer parameters
# ═══════════════════════════════════════════════════════════════════════════
def save_scorer_params(params: LinearScorerParams, path: Path) -> None:
    """
    Write linear-scorer parameters as YAML.

    Layout: ``feature_order`` header, ``ridge_lambda``, one ``{bias, coef}``
    block per metric, then the embedding table.
    """
    data = {
        "feature_order": list(params.feature_order),
        "ridge_lambda": float(params.ridge_lambda),
        "weights": {
            name: {"bias": float(params.bias[i]), "coef": params.coef[i].tolist()} for i, name in enumerate(METRIC_NAMES)
        },
        "embedding": params.embedding.table.tolist(),
    }
    _write_yaml(data, path)


def load_scorer_params(path: Path) -> LinearScorerParams:
    """
    Read linear-scorer parameters.

    Raises:
        MalformedFileError: On missing blocks
        DimensionMismatchError: If the weights do not match the feature order
        InvariantViolationError: On an invalid embedding table
    """
    data = _read_yaml(path)
    if not isinstance(data, dict):
        raise MalformedFileError("Scorer parameter file must be a mapping", path=str(path))
    try:
        weights = data["weights"]
        bias = np.array([float(weights[name]["bias"]) for name in METRIC_NAMES])
        coef = np.array([[float(c) for c in weights[name]["coef"]] for name in METRIC_NAMES])
        embedding = DirectiveEmbedding(table=np.array(data["embedding"], dtype=np.float64))
        return LinearScorerParams(
            feature_order=tuple(data["feature_order"]),
            ridge_lambda=float(data["ridge_lambda"]),
            bias=bias,
            coef=coef,
            embedding=embedding,
        )
    except (KeyError, TypeError, ValueError) as e:
        raise MalformedFileError("Malformed scorer parameter file", path=str(path), error=str(e)) from e


# ═══════════════════════════════════════════════════════════════════════════
# Few-shot exemplars and ablation specs
# ═══════════════════════════════════════════════════════════════════════════
_EXEMPLARS = TypeAdapter(list[FewShotExemplar])


def load_few_shot(path: Path) -> list[FewShotExemplar]:
    """
    Read a YAML list of ``{user, assistant}`` exemplars (an empty list is allowed).

    Raises:
        MalformedFileError: On wrong structure
    """
    data = _read_yaml(path)
    try:
        return _EXEMPLARS.validate_python(data or [])
    except ValidationError as e:
        raise translate_validation_error(e, path) from e


def load_ablation_spec(path: Path) -> AblationSpec:
    """
    Read an ablation spec; relative paths resolve against the spec's directory.

    Raises:
        MalformedFileError: On wrong structure
        InvariantViolationError: On undeclared scorer references
    """
    data = _read_yaml(path)
    try:
        spec = AblationSpec.model_validate(data)
    except ValidationError as e:
        raise translate_validation_error(e, path) from e
    return spec.resolve_paths(path.parent)


# ═══════════════════════════════════════════════════════════════════════════
# Run records
# ═══════════════════════════════════════════════════════════════════════════
def record_line(record: RunRecord) -> bytes:
    """One JSON Lines entry with sorted keys."""
    return orjson.dumps(record.model_dump(mode="json"), option=RECORD_OPTIONS) + b"\n"


def write_records(records: Iterable[RunRecord], path: Path) -> None:
    """Write records, one per line, in the given order."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        for record in records:
            fh.write(record_line(record))


def read_records(path: Path) -> list[RunRecord]:
    """
    Read a JSON Lines record file; blank lines are skipped.

    Raises:
        MalformedRecordsError: On unreadable files, invalid JSON or invalid records
    """
    try:
        lines = path.read_bytes().splitlines()
    except OSError as e:
        raise MalformedRecordsError("Cannot read record file", path=str(path), error=str(e)) from e
    records: list[RunRecord] = []
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            records.append(RunRecord.model_validate(orjson.loads(line)))
        except orjson.JSONDecodeError as e:
            raise MalformedRecordsError("Invalid JSON record", path=str(path), line=number, error=e.msg) from e
        except ValidationError as e:
            raise MalformedRecordsError(
                "Invalid record", path=str(path), line=number, field=_locus(e.errors()[0]["loc"])
            ) from e
    return records
