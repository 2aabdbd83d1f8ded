"""
Unit tests for VLM fusion: nomination, prompting, parsing and fallback.
"""

from __future__ import annotations

import httpx
import numpy as np
import orjson
import pytest

from tests.helpers import straight_line
from vsf_planner.core.exceptions import EmptyRankingError, UnparseableSelectionError
from vsf_planner.domain.control import VlmEndpointConfig
from vsf_planner.domain.models import ScenarioStage, Trajectory
from vsf_planner.domain.scoring import ScorerOutput
from vsf_planner.services.vlm_fusion import (
    DEFAULT_FEW_SHOT,
    VlmFusioner,
    build_selection_prompt,
    parse_selection,
    top_per_scorer,
)

ONES = [1.0] * 9
HALF = [1.0, 1.0, 1.0, 1.0, 0.5, 0.5, 1.0, 1.0, 1.0]
SLOW = [1.0, 1.0, 1.0, 1.0, 0.5, 1.0, 1.0, 1.0, 1.0]
SLOWER = [1.0, 1.0, 1.0, 1.0, 0.4, 1.0, 1.0, 1.0, 1.0]


def _behind(y: float) -> Trajectory:
    states = np.zeros((41, 4))
    states[:, 0] = -5.0 - 5.0 * np.arange(41) * 0.1
    states[:, 1] = y
    states[:, 2] = np.pi
    states[:, 3] = 5.0
    return Trajectory(states=states, dt=0.1)


def _outputs() -> list[ScorerOutput]:
    return [
        ScorerOutput(scorer_id="a", values=np.array([ONES, HALF, SLOW])),
        ScorerOutput(scorer_id="b", values=np.array([SLOWER, HALF, ONES])),
    ]


def _client(replies: list[str], calls: list[dict]) -> httpx.Client:
    def handler(request: httpx.Request) -> httpx.Response:
        calls.append(orjson.loads(request.content))
        text = replies[min(len(calls), len(replies)) - 1]
        return httpx.Response(200, content=orjson.dumps({"choices": [{"message": {"content": text}}]}))

    return httpx.Client(transport=httpx.MockTransport(handler))


class TestTopPerScorer:
    """Tests for nominee selection."""

    def test_deduplicates(self) -> None:
        """Test that a candidate nominated twice appears once."""
        trajs = [straight_line(10.0), straight_line(5.0)]
        nominees = top_per_scorer([("a", [1, 0]), ("b", [1, 0]), ("c", [0, 1])], trajs)
        assert [(n.scorer_id, n.index) for n in nominees] == [("a", 1), ("c", 0)]

    def test_identical_trajectories_merge(self) -> None:
        """Test that equal trajectories under different indices merge."""
        trajs = [straight_line(10.0), straight_line(10.0)]
        assert len(top_per_scorer([("a", [0]), ("b", [1])], trajs)) == 1

    def test_empty(self) -> None:
        """Test the empty-ranking errors."""
        with pytest.raises(EmptyRankingError):
            top_per_scorer([], [straight_line(1.0)])
        with pytest.raises(EmptyRankingError):
            top_per_scorer([("a", [])], [straight_line(1.0)])


class TestSelectionProtocol:
    """Tests for the prompt and reply format."""

    def test_prompt_layout(self, straight_stage: ScenarioStage) -> None:
        """Test system, exemplar and question messages."""
        messages = build_selection_prompt(straight_stage, ["A", "B"], scores={"A": 0.5, "B": 0.25})

        assert len(messages) == 1 + 2 * len(DEFAULT_FEW_SHOT) + 1
        question = messages[-1]["content"]
        assert question[1]["type"] == "image_url"
        assert "Candidates: A, B" in question[0]["text"]
        assert "Candidate B: score=0.2500" in question[0]["text"]

    def test_no_few_shot(self, straight_stage: ScenarioStage) -> None:
        """Test a zero-shot prompt."""
        assert len(build_selection_prompt(straight_stage, ["A"], few_shot=[])) == 2

    def test_parse(self) -> None:
        """Test case-insensitive parsing."""
        assert parse_selection("After review, selection: b", ["A", "B"]).chosen_label == "B"

    @pytest.mark.parametrize("text", ["I pick B", "SELECTION: C", "SELECTION: AB"])
    def test_parse_rejects(self, text: str) -> None:
        """Test missing keywords and labels that were not offered."""
        with pytest.raises(UnparseableSelectionError):
            parse_selection(text, ["A", "B"])


class TestVlmFusioner:
    """Tests for the full VLM fusion round."""

    def _candidates(self) -> list[Trajectory]:
        return [straight_line(10.0), straight_line(10.0, y=1.0), straight_line(8.0)]

    def test_follows_reply(self, straight_stage: ScenarioStage) -> None:
        """Test that the chosen letter maps back to the candidate index."""
        calls: list[dict] = []
        with _client(["SELECTION: A"], calls) as client:
            selection = VlmFusioner(VlmEndpointConfig(), client=client).select(straight_stage, self._candidates(), _outputs())

        assert selection.index == 0
        assert selection.label == "A"
        assert not selection.fallback
        assert len(calls) == 1
        assert calls[0]["messages"][-1]["content"][1]["image_url"]["url"].startswith("data:image/ppm;base64,")
        assert selection.diagnostics["labels"]["B"]["index"] == 2
        assert selection.diagnostics["labels"]["A"]["feasible"]

    def test_retries_then_falls_back(self, straight_stage: ScenarioStage) -> None:
        """Test the weight-fusion fallback after two unusable replies."""
        calls: list[dict] = []
        with _client(["no idea", "still unsure"], calls) as client:
            selection = VlmFusioner(VlmEndpointConfig(), client=client).select(straight_stage, self._candidates(), _outputs())

        assert len(calls) == 2
        assert selection.fallback
        assert selection.index == 2
        assert selection.label == "B"
        assert selection.diagnostics["fallback_reason"] == "unparseable selection"

    def test_second_attempt_succeeds(self, straight_stage: ScenarioStage) -> None:
        """Test that one bad reply is retried."""
        calls: list[dict] = []
        with _client(["hmm", "SELECTION: B"], calls) as client:
            selection = VlmFusioner(VlmEndpointConfig(), client=client).select(straight_stage, self._candidates(), _outputs())
        assert selection.index == 2
        assert not selection.fallback

    def test_render_failure_falls_back(self, straight_stage: ScenarioStage) -> None:
        """Test that an invisible overlay skips the query."""
        calls: list[dict] = []
        candidates = [_behind(0.0), _behind(1.0), _behind(2.0)]
        with _client(["SELECTION: A"], calls) as client:
            selection = VlmFusioner(VlmEndpointConfig(), client=client).select(straight_stage, candidates, _outputs())

        assert calls == []
        assert selection.fallback
        assert selection.index == 2
        assert selection.diagnostics["fallback_reason"].startswith("render:")
