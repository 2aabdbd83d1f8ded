"""
Unit tests for the chat-completions client.
"""

from __future__ import annotations

import base64

import httpx
import orjson
import pytest

from vsf_planner.core.exceptions import VlmProtocolError, VlmTransportError
from vsf_planner.domain.control import VlmEndpointConfig
from vsf_planner.infrastructure import vlm_client
from vsf_planner.infrastructure.vlm_client import attach_image, image_data_url, query_vlm


MESSAGES = [
    {"role": "system", "content": [{"type": "text", "text": "system"}]},
    {"role": "user", "content": [{"type": "text", "text": "question"}, {"type": "image_url", "image_url": {"url": ""}}]},
]


def _reply(text: object) -> httpx.Response:
    return httpx.Response(200, content=orjson.dumps({"choices": [{"message": {"role": "assistant", "content": text}}]}))


@pytest.fixture
def sleeps(monkeypatch: pytest.MonkeyPatch) -> list[float]:
    """Record backoff delays instead of sleeping."""
    delays: list[float] = []
    monkeypatch.setattr(vlm_client.time, "sleep", delays.append)
    return delays


class TestAttachImage:
    """Tests for image slot handling."""

    def test_fills_slots(self) -> None:
        """Test that placeholders receive the data URL and inputs are untouched."""
        filled = attach_image(MESSAGES, b"P6 fake")
        url = filled[1]["content"][1]["image_url"]["url"]

        assert url == image_data_url(b"P6 fake")
        assert base64.b64decode(url.split(",", 1)[1]) == b"P6 fake"
        assert MESSAGES[1]["content"][1]["image_url"]["url"] == ""

    def test_drops_slots_without_image(self) -> None:
        """Test text-only requests."""
        filled = attach_image(MESSAGES, None)
        assert [p["type"] for p in filled[1]["content"]] == ["text"]


class TestQueryVlm:
    """Tests for request, retry and error handling."""

    def test_request_shape(self, sleeps: list[float]) -> None:
        """Test URL, body and auth header."""
        seen: list[httpx.Request] = []

        def handler(request: httpx.Request) -> httpx.Response:
            seen.append(request)
            return _reply("SELECTION: A")

        cfg = VlmEndpointConfig(base_url="http://vlm.test/", api_key="secret", model_name="m1")
        with httpx.Client(transport=httpx.MockTransport(handler)) as client:
            text = query_vlm(MESSAGES, b"img", cfg, client=client)

        assert text == "SELECTION: A"
        request = seen[0]
        assert str(request.url) == "http://vlm.test/v1/chat/completions"
        assert request.headers["Authorization"] == "Bearer secret"
        body = orjson.loads(request.content)
        assert body["model"] == "m1"
        assert body["temperature"] == 0
        assert body["messages"][1]["content"][1]["image_url"]["url"].startswith("data:image/ppm;base64,")
        assert sleeps == []

    def test_no_auth_header_without_key(self) -> None:
        """Test that the header is omitted without a key."""
        seen: list[httpx.Request] = []

        def handler(request: httpx.Request) -> httpx.Response:
            seen.append(request)
            return _reply("ok")

        with httpx.Client(transport=httpx.MockTransport(handler)) as client:
            query_vlm(MESSAGES, None, VlmEndpointConfig(), client=client)
        assert "Authorization" not in seen[0].headers

    def test_retries_transient_status(self, sleeps: list[float]) -> None:
        """Test exponential backoff over transient failures."""
        statuses = iter([503, 429])

        def handler(request: httpx.Request) -> httpx.Response:
            status = next(statuses, 200)
            return httpx.Response(status) if status != 200 else _reply("done")

        cfg = VlmEndpointConfig(max_retries=2, backoff_base=0.5)
        with httpx.Client(transport=httpx.MockTransport(handler)) as client:
            assert query_vlm(MESSAGES, None, cfg, client=client) == "done"
        assert sleeps == [0.5, 1.0]

    def test_gives_up(self, sleeps: list[float]) -> None:
        """Test that persistent outages raise a transport error."""

        def handler(request: httpx.Request) -> httpx.Response:
            raise httpx.ConnectError("refused", request=request)

        cfg = VlmEndpointConfig(max_retries=3, backoff_base=0.1)
        with httpx.Client(transport=httpx.MockTransport(handler)) as client:
            with pytest.raises(VlmTransportError) as exc_info:
                query_vlm(MESSAGES, None, cfg, client=client)
        assert exc_info.value.context["attempts"] == 4
        assert sleeps == pytest.approx([0.1, 0.2, 0.4])

    def test_client_error_not_retried(self, sleeps: list[float]) -> None:
        """Test that a 400 fails immediately."""
        calls = []

        def handler(request: httpx.Request) -> httpx.Response:
            calls.append(1)
            return httpx.Response(400, text="bad request")

        with httpx.Client(transport=httpx.MockTransport(handler)) as client:
            with pytest.raises(VlmProtocolError):
                query_vlm(MESSAGES, None, VlmEndpointConfig(), client=client)
        assert len(calls) == 1
        assert sleeps == []

    @pytest.mark.parametrize(
        "response",
        [
            httpx.Response(200, content=b"not json"),
            httpx.Response(200, content=orjson.dumps({"choices": []})),
            _reply(["not", "text"]),
        ],
    )
    def test_malformed_body(self, response: httpx.Response) -> None:
        """Test malformed chat-completions bodies."""
        with httpx.Client(transport=httpx.MockTransport(lambda request: response)) as client:
            with pytest.raises(VlmProtocolError):
                query_vlm(MESSAGES, None, VlmEndpointConfig(), client=client)
