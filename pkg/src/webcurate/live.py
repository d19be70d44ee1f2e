"""HTTP provider with per-vendor payload adapters.

Each adapter knows how to turn a :class:`CurationRequest` into a JSON body and
how to read text and usage back out of the reply. :class:`LiveProvider` does the
transport: exactly one HTTP exchange per ``send`` call, with status codes mapped
onto the provider error classes the retry policy understands.
"""

from __future__ import annotations

import json
import logging
import os

import httpx

from .errors import AuthFailure, MalformedProviderReply, NetworkTimeout, RateLimited, TransientServer
from .gateway import CurationRequest, ProviderResponse, Usage

logger = logging.getLogger(__name__)

DEFAULT_BASE_URL = "https://api.openai.com/v1"


class ResponsesAdapter:
    """OpenAI-style ``/responses`` endpoint with a hosted ``web_search`` tool."""

    name = "openai-responses"
    path = "/responses"

    def payload(self, request: CurationRequest) -> dict:
        body: dict = {
            "model": request.model_id,
            "input": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
            "max_output_tokens": request.max_output_tokens,
        }
        if request.output_schema is not None:
            body["text"] = {
                "format": {
                    "type": "json_schema",
                    "name": "curation_result",
                    "schema": request.output_schema,
                    "strict": False,
                }
            }
        if request.search_enabled:
            body["tools"] = [{"type": "web_search"}]
        return body

    def parse(self, data: dict) -> tuple[str, Usage]:
        output = data.get("output")
        if not isinstance(output, list):
            raise MalformedProviderReply("reply has no output list")
        texts, searches = [], 0
        for item in output:
            kind = item.get("type")
            if kind == "web_search_call":
                searches += 1
            elif kind == "message":
                for part in item.get("content") or []:
                    if part.get("type") == "output_text":
                        texts.append(part.get("text", ""))
        usage = data.get("usage") or {}
        return "".join(texts), Usage(
            int(usage.get("input_tokens", 0)), int(usage.get("output_tokens", 0)), searches
        )


class ChatAdapter:
    """Generic chat-completions shape used by many OpenAI-compatible gateways."""

    name = "chat-completions"
    path = "/chat/completions"

    def payload(self, request: CurationRequest) -> dict:
        body: dict = {
            "model": request.model_id,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
            "max_completion_tokens": request.max_output_tokens,
        }
        if request.output_schema is not None:
            body["response_format"] = {
                "type": "json_schema",
                "json_schema": {"name": "curation_result", "schema": request.output_schema},
            }
        if request.search_enabled:
            body["tools"] = [{"type": "web_search"}]
        return body

    def parse(self, data: dict) -> tuple[str, Usage]:
        try:
            text = data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError):
            raise MalformedProviderReply("reply has no choices[0].message.content") from None
        usage = data.get("usage") or {}
        return text, Usage(
            int(usage.get("prompt_tokens", 0)),
            int(usage.get("completion_tokens", 0)),
            int(usage.get("search_calls", 0)),
        )


ADAPTERS = {a.name: a for a in (ResponsesAdapter(), ChatAdapter())}


def _retry_after(response: httpx.Response) -> float | None:
    value = response.headers.get("retry-after")
    if value is None:
        return None
    try:
        return max(float(value), 0.0)
    except ValueError:
        return None


class LiveProvider:
    name = "live"

    def __init__(
        self,
        api_key: str | None = None,
        base_url: str | None = None,
        vendor: str = "openai-responses",
        timeout: float = 300.0,
        transport: httpx.BaseTransport | None = None,
    ):
        api_key = api_key if api_key is not None else os.environ.get("DP_API_KEY")
        if not api_key:
            raise AuthFailure("DP_API_KEY is not set")
        if vendor not in ADAPTERS:
            raise ValueError(f"unknown vendor adapter {vendor!r}; choose from {sorted(ADAPTERS)}")
        self.adapter = ADAPTERS[vendor]
        self.base_url = (base_url or os.environ.get("DP_API_BASE_URL") or DEFAULT_BASE_URL).rstrip("/")
        self._client = httpx.Client(
            base_url=self.base_url,
            headers={"Authorization": f"Bearer {api_key}"},
            timeout=timeout,
            transport=transport,
        )

    def build_payload(self, request: CurationRequest) -> dict:
        return self.adapter.payload(request)

    def send(self, request: CurationRequest) -> ProviderResponse:
        body = self.build_payload(request)
        try:
            response = self._client.post(self.adapter.path, json=body)
        except httpx.TimeoutException as exc:
            raise NetworkTimeout(str(exc)) from None
        except httpx.TransportError as exc:
            raise TransientServer(f"transport error: {exc}") from None

        status = response.status_code
        if status == 429:
            raise RateLimited(_retry_after(response), response.text[:200])
        if status in (401, 403):
            raise AuthFailure(f"HTTP {status}: {response.text[:200]}")
        if status >= 500 or status == 408:
            raise TransientServer(f"HTTP {status}")
        if status >= 400:
            raise MalformedProviderReply(f"HTTP {status}: {response.text[:200]}")
        try:
            data = response.json()
        except json.JSONDecodeError:
            raise MalformedProviderReply("reply body is not JSON") from None
        text, usage = self.adapter.parse(data)
        logger.debug("live call model=%s usage=%s", request.model_id, usage)
        return ProviderResponse(text, usage, request.model_id)

    def identity(self) -> dict:
        return {"provider": self.name, "vendor": self.adapter.name, "base_url": self.base_url}

    def close(self) -> None:
        self._client.close()
