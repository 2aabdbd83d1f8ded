"""
Integration tests for the mock VLM server.

Drives the FastAPI app through its test client and checks that the
VLM-facing services talk to it end to end.
"""

from __future__ import annotations

from typing import Any

from fastapi.testclient import TestClient
import numpy as np
import pytest
from pytest_mock import MockerFixture

from vsf_planner.core.exceptions import InvalidConfigError, VlmProtocolError
from vsf_planner.domain.control import VlmEndpointConfig
from vsf_planner.domain.models import ScenarioStage, Trajectory
from vsf_planner.domain.scoring import (
    CognitiveDirective,
    FusionConfig,
    Lateral,
    Longitudinal,
    MetricWeights,
    ScorerOutput,
)
from vsf_planner.infrastructure.vlm_client import query_vlm
from vsf_planner.services.directive import VlmDirectiveProvider
from vsf_planner.services.fusion import fuse_models
from vsf_planner.services.metrics import compose_epdms_batch
from vsf_planner.services.vlm_fusion import VlmFusioner, VlmSelection
from vsf_planner.web import app as web_app
from vsf_planner.web.app import MockPolicy, create_app

ENDPOINT = VlmEndpointConfig(base_url="http://testserver", max_retries=0)

SELECTION_QUESTION = (
    "Ego speed: 8.00 m/s\nCommand: Forward\n"
    "Candidates: A, B, C\nCandidate A: score=0.2000\nCandidate B: score=0.9000\nCandidate C: score=0.9000\n"
)


def _chat(client: TestClient, messages: list[dict[str, Any]]) -> str:
    response = client.post("/v1/chat/completions", json={"model": "mock-vlm", "messages": messages})
    assert response.status_code == 200
    return response.json()["choices"][0]["message"]["content"]


class TestMockPolicy:
    """Tests for policy parsing."""

    @pytest.mark.parametrize(
        ("text", "expected"),
        [
            ("first", MockPolicy(kind="first")),
            ("highest-score", MockPolicy(kind="highest-score")),
            ("fixed:b", MockPolicy(kind="fixed", label="B")),
        ],
    )
    def test_valid(self, text: str, expected: MockPolicy) -> None:
        """Test the accepted policy strings."""
        assert MockPolicy.parse(text) == expected

    @pytest.mark.parametrize("text", ["", "random", "fixed:", "fixed:AB", "fixed:1"])
    def test_invalid(self, text: str) -> None:
        """Test that unknown policies are rejected."""
        with pytest.raises(InvalidConfigError):
            MockPolicy.parse(text)

    def test_str_round_trip(self) -> None:
        """Test that the printed policy parses back."""
        policy = MockPolicy.parse("fixed:C")
        assert MockPolicy.parse(str(policy)) == policy


class TestMockServer:
    """Tests for the HTTP surface."""

    def test_health(self) -> None:
        """Test the health endpoint."""
        client = TestClient(create_app("fixed:B"))
        response = client.get("/health")

        assert response.status_code == 200
        assert response.json()["status"] == "ok"
        assert response.json()["policy"] == "fixed:B"

    def test_lifespan_logs_start_and_shutdown(self, mocker: MockerFixture) -> None:
        """Test that entering and leaving the client runs the startup and shutdown hooks."""
        logger = mocker.patch.object(web_app, "logger")
        with TestClient(create_app("first")) as client:
            assert client.get("/health").status_code == 200
            assert [c.args[0] for c in logger.info.call_args_list] == ["mock_vlm_started"]

        events = [c.args[0] for c in logger.info.call_args_list]
        assert events == ["mock_vlm_started", "mock_vlm_shutdown"]
        assert logger.info.call_args_list[0].kwargs["policy"] == "first"

    @pytest.mark.parametrize(
        ("policy", "expected"),
        [("first", "SELECTION: A"), ("fixed:C", "SELECTION: C"), ("highest-score", "SELECTION: B")],
    )
    def test_selection_policies(self, policy: str, expected: str) -> None:
        """Test each policy on the same question; ties go to the first listed."""
        client = TestClient(create_app(policy))
        assert _chat(client, [{"role": "user", "content": SELECTION_QUESTION}]) == expected

    def test_answers_last_user_message(self) -> None:
        """Test that few-shot turns do not leak into the reply."""
        client = TestClient(create_app("first"))
        messages = [
            {"role": "user", "content": "Candidates: X, Y\n"},
            {"role": "assistant", "content": "SELECTION: Y"},
            {"role": "user", "content": [{"type": "text", "text": "Candidates: D, E\n"}, {"type": "image_url"}]},
        ]
        assert _chat(client, messages) == "SELECTION: D"

    def test_directive_request(self) -> None:
        """Test that directive prompts get a Keep reply with the command."""
        client = TestClient(create_app("fixed:A"))
        messages = [
            {"role": "system", "content": "Reply with exactly one line: DIRECTIVE: <longitudinal>, <lateral>"},
            {"role": "user", "content": "Ego speed: 3.00 m/s\nCommand: Left\n"},
        ]
        assert _chat(client, messages) == "DIRECTIVE: Keep, Left"

    def test_no_user_message(self) -> None:
        """Test that a request without a user turn is rejected."""
        client = TestClient(create_app())
        response = client.post(
            "/v1/chat/completions",
            json={"model": "mock-vlm", "messages": [{"role": "system", "content": "hello"}]},
        )
        assert response.status_code == 400

    def test_empty_messages(self) -> None:
        """Test request validation."""
        client = TestClient(create_app())
        response = client.post("/v1/chat/completions", json={"model": "mock-vlm", "messages": []})
        assert response.status_code == 422


class TestClientAgainstMock:
    """Tests for the VLM client and providers against the mock."""

    def test_query_vlm(self) -> None:
        """Test a full request/response cycle through the client."""
        client = TestClient(create_app("fixed:B"))
        reply = query_vlm([{"role": "user", "content": SELECTION_QUESTION}], None, ENDPOINT, client=client)
        assert reply == "SELECTION: B"

    def test_protocol_error_not_retried(self) -> None:
        """Test that a 400 reply surfaces as a protocol error."""
        client = TestClient(create_app())
        with pytest.raises(VlmProtocolError):
            query_vlm([{"role": "system", "content": "hi"}], None, ENDPOINT, client=client)

    def test_directive_provider(self, straight_stage: ScenarioStage) -> None:
        """Test that the remote directive provider parses the mock reply."""
        provider = VlmDirectiveProvider(ENDPOINT, client=TestClient(create_app()))
        directive = provider.directive_for(straight_stage)
        assert directive == CognitiveDirective(longitudinal=Longitudinal.KEEP, lateral=Lateral.FORWARD)


@pytest.mark.slow
class TestHermeticVlmFusion:
    """Full VLM fusion rounds against the mock server, repeated per policy."""

    RUNS = 100

    @staticmethod
    def _outputs(run: int, count: int) -> list[ScorerOutput]:
        rng = np.random.default_rng([7, run])
        return [ScorerOutput(scorer_id=f"s{k}", values=rng.uniform(0.0, 1.0, size=(count, 9))) for k in range(3)]

    @staticmethod
    def _contracted_index(policy: str, selection: VlmSelection, outputs: list[ScorerOutput], fusion: FusionConfig) -> int:
        index = {label: entry["index"] for label, entry in selection.diagnostics["labels"].items()}
        order = sorted(index)
        fused = dict(fuse_models(outputs, fusion))
        fallback = min(order, key=lambda label: (-fused[index[label]], index[label]))
        if policy == "first":
            return index[order[0]]
        if policy.startswith("fixed:"):
            label = policy.split(":", 1)[1].upper()
            return index.get(label, index[fallback])
        mean = np.mean([out.values[[index[label] for label in order]] for out in outputs], axis=0)
        listed = [float(f"{value:.4f}") for value in compose_epdms_batch(mean, MetricWeights())]
        return index[order[int(np.argmax(listed))]]

    @pytest.mark.parametrize("policy", ["first", "fixed:B", "fixed:D", "highest-score"])
    def test_contracted_candidate_every_run(
        self,
        policy: str,
        straight_stage: ScenarioStage,
        small_candidates: list[Trajectory],
    ) -> None:
        """Test that every run returns the candidate the policy dictates; fixed:D always falls back."""
        fusion = FusionConfig()
        fusioner = VlmFusioner(ENDPOINT, fusion=fusion, client=TestClient(create_app(policy)))
        fallbacks = 0
        for run in range(self.RUNS):
            outputs = self._outputs(run, len(small_candidates))
            selection = fusioner.select(straight_stage, small_candidates, outputs)

            assert selection.index == self._contracted_index(policy, selection, outputs, fusion), run
            if selection.fallback:
                assert selection.diagnostics["fallback_reason"] == "unparseable selection"
                fallbacks += 1

        if policy == "fixed:D":
            assert fallbacks == self.RUNS
        elif policy in ("first", "highest-score"):
            assert fallbacks == 0
