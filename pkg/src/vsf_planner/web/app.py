"""
Deterministic mock VLM server.

Speaks the chat-completions wire format used by the VLM fusioner and the
remote directive provider. Replies follow a fixed policy:

- ``first``: the first listed candidate
- ``fixed:<letter>``: always that letter
- ``highest-score``: the candidate with the highest listed score
  (first listed on ties, first candidate when no scores are listed)

Directive requests (system prompt asking for ``DIRECTIVE:``) are answered
with ``DIRECTIVE: Keep, <command>``.
"""

from __future__ import annotations

from collections.abc import AsyncIterator
from contextlib import asynccontextmanager
from dataclasses import dataclass
import re
import socket
from typing import Any, Literal

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field
import uvicorn

from ..core.config import settings
from ..core.exceptions import BindFailureError, InvalidConfigError
from ..core.logging import get_logger

logger = get_logger(__name__)

_CANDIDATES = re.compile(r"^Candidates:\s*(.+)$", re.MULTILINE)
_SCORE = re.compile(r"^Candidate\s+([A-Z]):\s*score=([-+0-9.eE]+)", re.MULTILINE)
_COMMAND = re.compile(r"^Command:\s*(Left|Forward|Right)", re.MULTILINE | re.IGNORECASE)


# ═══════════════════════════════════════════════════════════════════════════
# Policy
# ═══════════════════════════════════════════════════════════════════════════
@dataclass(frozen=True)
class MockPolicy:
    """Reply policy of the mock server."""

    kind: Literal["first", "fixed", "highest-score"]
    label: str | None = None

    @classmethod
    def parse(cls, text: str) -> MockPolicy:
        """
        Parse ``first``, ``fixed:<letter>`` or ``highest-score``.

        Raises:
            InvalidConfigError: On any other policy string
        """
        value = text.strip()
        lowered = value.lower()
        if lowered == "first":
            return cls(kind="first")
        if lowered in ("highest-score", "highest_score"):
            return cls(kind="highest-score")
        if lowered.startswith("fixed:"):
            label = value.split(":", 1)[1].strip().upper()
            if len(label) == 1 and label.isalpha():
                return cls(kind="fixed", label=label)
        raise InvalidConfigError("Unknown mock VLM policy", policy=text)

    def __str__(self) -> str:
        return f"fixed:{self.label}" if self.kind == "fixed" else self.kind


# ═══════════════════════════════════════════════════════════════════════════
# Request/Response Models
# ═══════════════════════════════════════════════════════════════════════════
class ContentPart(BaseModel):
    """One part of a multi-part message."""

    type: str
    text: str | None = None
    image_url: dict[str, Any] | None = None


class ChatMessage(BaseModel):
    """A chat message with plain or multi-part content."""

    role: str
    content: str | list[ContentPart]

    @property
    def text(self) -> str:
        if isinstance(self.content, str):
            return self.content
        return "\n".join(part.text for part in self.content if part.type == "text" and part.text)


class ChatCompletionRequest(BaseModel):
    """Chat-completions request body."""

    model: str
    temperature: float = 0.0
    messages: list[ChatMessage] = Field(..., min_length=1)


# ═══════════════════════════════════════════════════════════════════════════
# Reply Logic
# ═══════════════════════════════════════════════════════════════════════════
def mock_reply(request: ChatCompletionRequest, policy: MockPolicy) -> str:
    """Reply text for a request under ``policy``."""
    system = " ".join(m.text for m in request.messages if m.role == "system")
    question = next((m.text for m in reversed(request.messages) if m.role == "user"), "")

    if "DIRECTIVE:" in system:
        command = _COMMAND.search(question)
        lateral = command.group(1).capitalize() if command else "Forward"
        return f"DIRECTIVE: Keep, {lateral}"

    listed = _CANDIDATES.search(question)
    labels = [label.strip() for label in listed.group(1).split(",")] if listed else ["A"]
    if policy.kind == "fixed":
        return f"SELECTION: {policy.label}"
    if policy.kind == "highest-score":
        scores = [(label, float(score)) for label, score in _SCORE.findall(question)]
        if scores:
            best = max(scores, key=lambda item: item[1])
            return f"SELECTION: {best[0]}"
    return f"SELECTION: {labels[0]}"


# ═══════════════════════════════════════════════════════════════════════════
# Application Setup
# ═══════════════════════════════════════════════════════════════════════════
def create_app(policy: MockPolicy | str = "first") -> FastAPI:
    """
    Build the mock server for a policy.

    Raises:
        InvalidConfigError: If the policy string is invalid
    """
    active = policy if isinstance(policy, MockPolicy) else MockPolicy.parse(policy)

    @asynccontextmanager
    async def lifespan(_app: FastAPI) -> AsyncIterator[None]:
        logger.info("mock_vlm_started", policy=str(active), environment=settings.environment)
        yield
        logger.info("mock_vlm_shutdown")

    app = FastAPI(
        title=f"{settings.app_name} mock VLM",
        version=settings.app_version,
        description="Deterministic chat-completions responder",
        lifespan=lifespan,
    )
    app.state.policy = active

    @app.get("/health")
    async def health() -> dict[str, str]:
        """
        Health check endpoint.

        Returns:
            Health status and active policy
        """
        return {"status": "ok", "version": settings.app_version, "policy": str(active)}

    @app.post("/v1/chat/completions")
    async def chat_completions(request: ChatCompletionRequest) -> dict[str, Any]:
        """
        Answer one chat-completion request.

        Raises:
            HTTPException: If the request carries no user message
        """
        if not any(m.role == "user" for m in request.messages):
            raise HTTPException(status_code=400, detail="Request has no user message")
        content = mock_reply(request, active)
        logger.debug("mock_vlm_reply", policy=str(active), reply=content)
        return {
            "id": "chatcmpl-mock",
            "object": "chat.completion",
            "model": request.model,
            "choices": [
                {
                    "index": 0,
                    "message": {"role": "assistant", "content": content},
                    "finish_reason": "stop",
                }
            ],
        }

    return app


def check_port(host: str, port: int) -> None:
    """
    Make sure ``host:port`` can be bound.

    Raises:
        BindFailureError: If the address is in use or not bindable
    """
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as sock:
        try:
            sock.bind((host, port))
        except OSError as e:
            raise BindFailureError("Cannot bind mock VLM server", host=host, port=port, error=str(e)) from e


def serve(policy: MockPolicy | str, host: str = "127.0.0.1", port: int = 8765) -> None:
    """
    Run the mock server until interrupted.

    Raises:
        BindFailureError: If the port is taken
        InvalidConfigError: If the policy is invalid
    """
    app = create_app(policy)
    check_port(host, port)
    uvicorn.run(app, host=host, port=port, log_level=settings.log_level.lower())
