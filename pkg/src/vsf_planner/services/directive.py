"""
Cognitive directives: embedding, rule-based provider and reply parsing.
"""

from __future__ import annotations

import math
import re
from typing import Protocol

import httpx
import numpy as np

from ..core.config import Settings, settings
from ..core.exceptions import InvalidParamsError, UnrecognizedDirectiveError
from ..core.logging import LoggerMixin
from ..domain.control import VlmEndpointConfig
from ..domain.models import Command, FloatArray, LightState, ScenarioStage
from ..domain.scoring import DIRECTIVE_COUNT, CognitiveDirective, DirectiveEmbedding, Lateral, Longitudinal
from ..infrastructure.vlm_client import query_vlm


_DIRECTIVE_PATTERN = re.compile(r"(keep|accelerate|decelerate|stop)\s*,\s*(forward|left|right)", re.IGNORECASE)

_LATERAL_FOR_COMMAND: dict[Command, Lateral] = {
    Command.LEFT: Lateral.LEFT,
    Command.FORWARD: Lateral.FORWARD,
    Command.RIGHT: Lateral.RIGHT,
}

DIRECTIVE_SYSTEM_PROMPT = (
    "You are the driving-intent module of an autonomous vehicle. Given the ego status, predict the "
    "next longitudinal action (Keep, Accelerate, Decelerate or Stop) and lateral action (Forward, Left "
    "or Right). Reply with exactly one line: DIRECTIVE: <longitudinal>, <lateral>"
)


def encode_directive(directive: CognitiveDirective, table: DirectiveEmbedding) -> FloatArray:
    """Embedding row of ``directive`` (a read-only view into the table)."""
    return table.table[directive.index]


def init_embedding(dim: int = 16, seed: int = 0) -> DirectiveEmbedding:
    """
    Seeded directive embedding with unit-norm rows.

    For ``dim >= 12`` the rows are orthonormal (QR of a Gaussian matrix);
    below that they are normalized Gaussian rows.

    Raises:
        InvalidParamsError: If ``dim < 1``
    """
    if dim < 1:
        raise InvalidParamsError("Embedding dimension must be positive", dim=dim)
    rng = np.random.default_rng(seed)
    gauss = rng.standard_normal((DIRECTIVE_COUNT, dim))
    if dim >= DIRECTIVE_COUNT:
        q, _ = np.linalg.qr(gauss.T)
        table = q.T
    else:
        table = gauss
    table = table / np.linalg.norm(table, axis=1, keepdims=True)
    return DirectiveEmbedding(table=table)


def format_directive_reply(directive: CognitiveDirective) -> str:
    """Wire form of a directive reply."""
    return f"DIRECTIVE: {directive.format()}"


def parse_directive_reply(text: str) -> CognitiveDirective:
    """
    Extract the first ``<longitudinal>, <lateral>`` pair from free text.

    Raises:
        UnrecognizedDirectiveError: If no pair is found
    """
    match = _DIRECTIVE_PATTERN.search(text)
    if match is None:
        raise UnrecognizedDirectiveError("No directive found in reply", text=text[:80])
    return CognitiveDirective(
        longitudinal=Longitudinal(match.group(1).capitalize()),
        lateral=Lateral(match.group(2).capitalize()),
    )


def _hazard_distance(stage: ScenarioStage, cfg: Settings) -> float:
    """Distance ahead to the nearest red stop line or slower agent in the ego corridor."""
    ego = stage.ego
    heading = ego.pose.heading
    c, s = math.cos(heading), math.sin(heading)
    margin = cfg.directive.blocking_lateral_margin
    half_length = cfg.vehicle.length / 2.0

    def to_ego(x: float, y: float) -> tuple[float, float]:
        dx, dy = x - ego.pose.x, y - ego.pose.y
        return c * dx + s * dy, -s * dx + c * dy

    nearest = math.inf
    for light in stage.map.traffic_lights:
        if light.state_at(0.0) != LightState.RED:
            continue
        (ax, ay), (bx, by) = (to_ego(*p) for p in light.stop_line)
        if min(ay, by) > margin or max(ay, by) < -margin:
            continue
        ahead = (ax + bx) / 2.0
        if ahead > 0.0:
            nearest = min(nearest, ahead)

    if stage.agents:
        for agent in stage.agents:
            x, y, _, speed = agent.states_at(np.array([0.0]))[0]
            fx, fy = to_ego(float(x), float(y))
            if fx <= 0.0 or abs(fy) > margin or speed > ego.speed:
                continue
            nearest = min(nearest, max(fx - half_length - agent.length / 2.0, 0.0))
    return nearest


def rule_based_directive(stage: ScenarioStage, cfg: Settings | None = None) -> CognitiveDirective:
    """
    Directive from a fixed rule table.

    The lateral axis follows the navigation command. Longitudinally, with
    ``d = v²/(2·decel) + margin``: Stop when a hazard lies within ``d``,
    Decelerate within ``2d``, Accelerate below ``accelerate_ratio`` of the
    speed limit, otherwise Keep.
    """
    cfg = cfg or settings
    rules = cfg.directive
    speed = stage.ego.speed
    stopping = speed * speed / (2.0 * rules.comfortable_decel) + rules.stopping_margin
    hazard = _hazard_distance(stage, cfg)

    if hazard <= stopping:
        longitudinal = Longitudinal.STOP
    elif hazard <= 2.0 * stopping:
        longitudinal = Longitudinal.DECELERATE
    elif speed < rules.accelerate_ratio * rules.speed_limit:
        longitudinal = Longitudinal.ACCELERATE
    else:
        longitudinal = Longitudinal.KEEP
    return CognitiveDirective(longitudinal=longitudinal, lateral=_LATERAL_FOR_COMMAND[stage.ego.command])


class DirectiveProvider(Protocol):
    """Anything that can produce a directive for a stage."""

    def directive_for(self, stage: ScenarioStage) -> CognitiveDirective: ...


class RuleDirectiveProvider:
    """Adapter exposing ``rule_based_directive`` as a provider."""

    def __init__(self, cfg: Settings | None = None) -> None:
        self.cfg = cfg or settings

    def directive_for(self, stage: ScenarioStage) -> CognitiveDirective:
        return rule_based_directive(stage, self.cfg)


def build_directive_prompt(stage: ScenarioStage) -> list[dict[str, object]]:
    """Chat messages asking the VLM for a directive (text only)."""
    ego = stage.ego
    status = (
        f"Ego speed: {ego.speed:.2f} m/s\n"
        f"Ego acceleration: {ego.accel:.2f} m/s^2\n"
        f"Command: {ego.command.value}\n"
        "What should the vehicle do next?"
    )
    return [
        {"role": "system", "content": [{"type": "text", "text": DIRECTIVE_SYSTEM_PROMPT}]},
        {"role": "user", "content": [{"type": "text", "text": status}]},
    ]


class VlmDirectiveProvider(LoggerMixin):
    """
    Asks a chat-completions endpoint for the directive.

    Args:
        endpoint: Endpoint configuration
        client: Optional HTTP client (tests pass a FastAPI TestClient)
    """

    def __init__(self, endpoint: VlmEndpointConfig, client: httpx.Client | None = None) -> None:
        self.endpoint = endpoint
        self.client = client

    def directive_for(self, stage: ScenarioStage) -> CognitiveDirective:
        reply = query_vlm(build_directive_prompt(stage), None, self.endpoint, client=self.client)
        directive = parse_directive_reply(reply)
        self.logger.debug("vlm_directive", scenario=stage.scenario_id, stage=stage.stage_index, directive=directive.format())
        return directive
