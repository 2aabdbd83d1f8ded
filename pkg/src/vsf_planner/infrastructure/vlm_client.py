"""
Chat-completions client for the VLM endpoint.

One request per call, retried with exponential backoff on transport errors
and transient HTTP statuses.
"""

from __future__ import annotations

import base64
import copy
import time
from typing import Any

import httpx
import orjson

from ..core.exceptions import VlmProtocolError, VlmTransportError
from ..core.logging import get_logger
from ..domain.control import VlmEndpointConfig

logger = get_logger(__name__)

CHAT_COMPLETIONS_PATH = "/v1/chat/completions"
RETRYABLE_STATUS = frozenset({429, 500, 502, 503, 504})

Message = dict[str, Any]


def image_data_url(image: bytes) -> str:
    """``data:image/ppm;base64,...`` URL of a PPM image."""
    return "data:image/ppm;base64," + base64.b64encode(image).decode("ascii")


def attach_image(messages: list[Message], image: bytes | None) -> list[Message]:
    """
    Fill every ``image_url`` slot with the image, or drop the slots when there is none.

    The input messages are left untouched.
    """
    filled = copy.deepcopy(messages)
    for message in filled:
        content = message.get("content")
        if not isinstance(content, list):
            continue
        parts = []
        for part in content:
            if part.get("type") == "image_url":
                if image is None:
                    continue
                part = {"type": "image_url", "image_url": {"url": image_data_url(image)}}
            parts.append(part)
        message["content"] = parts
    return filled


def request_body(messages: list[Message], cfg: VlmEndpointConfig) -> bytes:
    """Serialized chat-completions request."""
    return orjson.dumps({"model": cfg.model_name, "temperature": cfg.temperature, "messages": messages})


def _reply_text(response: httpx.Response) -> str:
    try:
        data = orjson.loads(response.content)
        content = data["choices"][0]["message"]["content"]
    except (orjson.JSONDecodeError, KeyError, IndexError, TypeError) as e:
        raise VlmProtocolError("Malformed chat-completions response", error=str(e)) from e
    if not isinstance(content, str):
        raise VlmProtocolError("Reply content is not text", content_type=type(content).__name__)
    return content


def query_vlm(
    messages: list[Message],
    image: bytes | None,
    cfg: VlmEndpointConfig,
    client: httpx.Client | None = None,
) -> str:
    """
    Send one chat-completions request and return the assistant text.

    Args:
        messages: Chat messages; ``image_url`` parts are placeholders
        image: PPM bytes attached to the placeholders (``None`` drops them)
        cfg: Endpoint configuration
        client: HTTP client to use (a fresh one is opened when ``None``)

    Returns:
        Assistant reply text

    Raises:
        VlmTransportError: If the endpoint stays unreachable or keeps failing
            transiently after ``cfg.max_retries`` retries
        VlmProtocolError: On a malformed body or a non-retryable HTTP status
    """
    url = cfg.base_url.rstrip("/") + CHAT_COMPLETIONS_PATH
    body = request_body(attach_image(messages, image), cfg)
    headers = {"Content-Type": "application/json"}
    if cfg.api_key:
        headers["Authorization"] = f"Bearer {cfg.api_key}"

    own_client = client is None
    http = client if client is not None else httpx.Client(timeout=cfg.timeout)
    last_error = ""
    try:
        for attempt in range(cfg.max_retries + 1):
            if attempt:
                delay = cfg.backoff_base * 2 ** (attempt - 1)
                logger.warning("vlm_retry", attempt=attempt, delay=delay, error=last_error)
                time.sleep(delay)
            try:
                response = http.post(url, content=body, headers=headers, timeout=cfg.timeout)
            except httpx.TransportError as e:
                last_error = f"{type(e).__name__}: {e}"
                continue
            if response.status_code in RETRYABLE_STATUS:
                last_error = f"HTTP {response.status_code}"
                continue
            if response.status_code != 200:
                raise VlmProtocolError(
                    "Endpoint rejected the request",
                    status=response.status_code,
                    body=response.text[:200],
                )
            return _reply_text(response)
    finally:
        if own_client:
            http.close()

    raise VlmTransportError("VLM endpoint unavailable", url=url, attempts=cfg.max_retries + 1, error=last_error)
