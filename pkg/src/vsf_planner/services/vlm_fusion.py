"""
VLM fusioner.

Each scorer nominates its best candidate; the nominees are LQR-simulated,
drawn onto the front camera view and shown to a VLM, whose reply picks the
final trajectory. When the reply cannot be parsed (after one retry) or the
overlay cannot be drawn, the weight-fusion winner among the nominees is
used instead.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
import re
import string
import threading
from typing import Any

import httpx
import numpy as np

from ..core.exceptions import EmptyRankingError, NoVisiblePointsError, UnparseableSelectionError
from ..core.logging import LoggerMixin
from ..domain.control import FewShotExemplar, LqrConfig, RenderConfig, SelectionResponse, VlmEndpointConfig
from ..domain.models import ScenarioStage, Trajectory
from ..domain.scoring import FusionConfig, MetricWeights, ScorerOutput
from ..infrastructure.vlm_client import Message, query_vlm
from .fusion import fuse_models, rank_candidates
from .lqr import initial_state, track_trajectory
from .metrics import compose_epdms_batch
from .rendering import encode_ppm, render_overlay

LABELS = string.ascii_uppercase

_SELECTION_PATTERN = re.compile(r"\bSELECTION:\s*([A-Z])\b", re.IGNORECASE)

SELECTION_SYSTEM_PROMPT = (
    "You are the final decision module of an autonomous driving planner. The image shows the "
    "front camera view with several candidate trajectories drawn in different colors, each "
    "marked with a letter. Choose the safest trajectory that still makes progress. Reply with "
    "exactly one line: SELECTION: <letter>"
)

DEFAULT_FEW_SHOT: tuple[FewShotExemplar, ...] = (
    FewShotExemplar(
        user=(
            "Ego speed: 8.00 m/s\nEgo acceleration: 0.00 m/s^2\nCommand: Forward\n"
            "Candidates: A, B\nCandidate A: score=0.3100\nCandidate B: score=0.8700\n"
            "Candidate A leaves the road on the right; candidate B follows the lane."
        ),
        assistant="SELECTION: B",
    ),
    FewShotExemplar(
        user=(
            "Ego speed: 10.00 m/s\nEgo acceleration: -1.00 m/s^2\nCommand: Forward\n"
            "Candidates: A, B, C\nCandidate A: score=0.7400\nCandidate B: score=0.6900\nCandidate C: score=0.2000\n"
            "A red light is ahead; candidate A stops before the line."
        ),
        assistant="SELECTION: A",
    ),
)


@dataclass(frozen=True)
class Nominee:
    """A scorer's top candidate presented to the VLM."""

    scorer_id: str
    index: int
    trajectory: Trajectory


def top_per_scorer(rankings: Sequence[tuple[str, Sequence[int]]], candidates: Sequence[Trajectory]) -> list[Nominee]:
    """
    The best candidate of every scorer, without duplicates.

    Identical trajectories nominated by several scorers appear once, under
    the first scorer that nominated them.

    Args:
        rankings: ``(scorer_id, candidate indices best first)`` per scorer
        candidates: Candidate list the indices refer to

    Raises:
        EmptyRankingError: If there are no rankings or one of them is empty
    """
    if not rankings:
        raise EmptyRankingError("No scorer rankings to nominate from")
    nominees: list[Nominee] = []
    for scorer_id, ranking in rankings:
        if len(ranking) == 0:
            raise EmptyRankingError("Scorer ranked no candidates", scorer=scorer_id)
        best = int(ranking[0])
        traj = candidates[best]
        if any(n.index == best or n.trajectory == traj for n in nominees):
            continue
        nominees.append(Nominee(scorer_id=scorer_id, index=best, trajectory=traj))
    return nominees


def build_selection_prompt(
    stage: ScenarioStage,
    labels: Sequence[str],
    few_shot: Sequence[FewShotExemplar] = DEFAULT_FEW_SHOT,
    scores: Mapping[str, float] | None = None,
) -> list[Message]:
    """
    Chat messages for the selection query.

    The last user message carries the ego status, the candidate labels, an
    optional score line per label and an ``image_url`` slot for the overlay.

    Args:
        stage: Scenario stage (ego status)
        labels: Candidate letters in presentation order
        few_shot: Worked exemplars placed before the question
        scores: Optional label → score shown to the model
    """
    ego = stage.ego
    lines = [
        f"Ego speed: {ego.speed:.2f} m/s",
        f"Ego acceleration: {ego.accel:.2f} m/s^2",
        f"Command: {ego.command.value}",
        f"Candidates: {', '.join(labels)}",
    ]
    if scores is not None:
        lines.extend(f"Candidate {label}: score={scores[label]:.4f}" for label in labels)
    lines.append("Which candidate should the vehicle follow?")

    messages: list[Message] = [{"role": "system", "content": [{"type": "text", "text": SELECTION_SYSTEM_PROMPT}]}]
    for exemplar in few_shot:
        messages.append({"role": "user", "content": [{"type": "text", "text": exemplar.user}]})
        messages.append({"role": "assistant", "content": [{"type": "text", "text": exemplar.assistant}]})
    messages.append(
        {
            "role": "user",
            "content": [
                {"type": "text", "text": "\n".join(lines)},
                {"type": "image_url", "image_url": {"url": ""}},
            ],
        }
    )
    return messages


def parse_selection(text: str, labels: Sequence[str]) -> SelectionResponse:
    """
    Read ``SELECTION: <letter>`` (case-insensitive) from a reply.

    Raises:
        UnparseableSelectionError: If the keyword is missing or the letter is
            not one of ``labels``
    """
    match = _SELECTION_PATTERN.search(text)
    if match is None:
        raise UnparseableSelectionError("Reply has no selection", text=text[:80])
    label = match.group(1).upper()
    if label not in labels:
        raise UnparseableSelectionError("Selected label was not offered", label=label, labels=list(labels))
    return SelectionResponse(chosen_label=label, raw_text=text)


@dataclass
class VlmSelection:
    """
    Outcome of one VLM fusion.

    Attributes:
        index: Index of the chosen candidate in the full candidate list
        label: Letter it was presented under
        fallback: Whether the weight-fusion winner was used instead of the VLM reply
        diagnostics: Per-label LQR diagnostics, the reply and the fallback reason
    """

    index: int
    label: str
    fallback: bool
    diagnostics: dict[str, Any] = field(default_factory=dict)


class VlmFusioner(LoggerMixin):
    """
    Simulate, render, prompt and parse.

    Args:
        endpoint: VLM endpoint
        fusion: Weight-fusion settings for per-scorer rankings and the fallback
        lqr: Tracking controller settings
        render: Overlay settings
        few_shot: Prompt exemplars
        client: Optional HTTP client shared across queries
        limiter: Optional semaphore bounding concurrent queries
        metric_weights: Grouping for the score lines shown in the prompt
    """

    def __init__(
        self,
        endpoint: VlmEndpointConfig,
        fusion: FusionConfig | None = None,
        lqr: LqrConfig | None = None,
        render: RenderConfig | None = None,
        few_shot: Sequence[FewShotExemplar] = DEFAULT_FEW_SHOT,
        client: httpx.Client | None = None,
        limiter: threading.Semaphore | None = None,
        metric_weights: MetricWeights | None = None,
    ) -> None:
        self.endpoint = endpoint
        self.fusion = fusion or FusionConfig()
        self.lqr = lqr or LqrConfig()
        self.render = render or RenderConfig()
        self.few_shot = list(few_shot)
        self.client = client
        self.limiter = limiter
        self.metric_weights = metric_weights or MetricWeights()

    def _ask(self, messages: list[Message], image: bytes) -> str:
        if self.limiter is None:
            return query_vlm(messages, image, self.endpoint, client=self.client)
        with self.limiter:
            return query_vlm(messages, image, self.endpoint, client=self.client)

    def select(self, stage: ScenarioStage, candidates: Sequence[Trajectory], outputs: Sequence[ScorerOutput]) -> VlmSelection:
        """
        Pick one candidate for a stage.

        Args:
            stage: Scenario stage
            candidates: Full candidate list scored by ``outputs``
            outputs: One output per participating scorer

        Returns:
            The selection; never empty

        Raises:
            EmptyRankingError: If a scorer produced no scores
            LengthMismatchError: If outputs cover different candidate lists
            VlmTransportError: If the endpoint is unreachable
            VlmProtocolError: If the endpoint answers malformed bodies
        """
        rankings = [(out.scorer_id, rank_candidates(out, self.fusion)) for out in outputs]
        nominees = top_per_scorer(rankings, candidates)
        labels = [LABELS[i] for i in range(len(nominees))]

        fused = dict(fuse_models(outputs, self.fusion))
        fallback_pos = min(range(len(nominees)), key=lambda i: (-fused[nominees[i].index], nominees[i].index))

        mean_scores = np.mean([out.values[[n.index for n in nominees]] for out in outputs], axis=0)
        composed = compose_epdms_batch(mean_scores, self.metric_weights)
        shown = {label: float(composed[i]) for i, label in enumerate(labels)}

        diagnostics: dict[str, Any] = {"labels": {}, "reply": None, "fallback_reason": None}
        simulated = []
        for label, nominee in zip(labels, nominees, strict=True):
            track = track_trajectory(nominee.trajectory, initial_state(nominee.trajectory), self.lqr)
            simulated.append((label, track.simulated))
            diagnostics["labels"][label] = {"index": nominee.index, "scorer": nominee.scorer_id, **track.diagnostics}

        try:
            image = encode_ppm(render_overlay(stage, simulated, self.render))
        except NoVisiblePointsError as e:
            return self._fallback(nominees, labels, fallback_pos, diagnostics, f"render: {e}")

        messages = build_selection_prompt(stage, labels, self.few_shot, shown)
        for attempt in range(2):
            reply = self._ask(messages, image)
            diagnostics["reply"] = reply
            try:
                choice = parse_selection(reply, labels)
            except UnparseableSelectionError as e:
                self.logger.warning("vlm_selection_unparseable", scenario=stage.scenario_id, attempt=attempt, error=str(e))
                continue
            pos = labels.index(choice.chosen_label)
            self.logger.debug("vlm_selection", scenario=stage.scenario_id, stage=stage.stage_index, label=choice.chosen_label)
            return VlmSelection(index=nominees[pos].index, label=choice.chosen_label, fallback=False, diagnostics=diagnostics)

        return self._fallback(nominees, labels, fallback_pos, diagnostics, "unparseable selection")

    def _fallback(
        self,
        nominees: Sequence[Nominee],
        labels: Sequence[str],
        pos: int,
        diagnostics: dict[str, Any],
        reason: str,
    ) -> VlmSelection:
        diagnostics["fallback_reason"] = reason
        self.logger.info("vlm_fallback", reason=reason, label=labels[pos])
        return VlmSelection(index=nominees[pos].index, label=labels[pos], fallback=True, diagnostics=diagnostics)
