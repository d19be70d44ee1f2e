"""Provider abstraction: one model call with optional web search and structured output.

Three implementations share the ``send(request) -> ProviderResponse`` contract:

* :class:`ReplayProvider` serves recorded responses keyed by :func:`request_key`
  and never touches the network.
* :class:`RecordingProvider` wraps any other provider and writes one fixture
  file per request key.
* :class:`webcurate.live.LiveProvider` talks HTTP to a vendor endpoint.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, runtime_checkable

from .errors import FixtureMiss, MalformedProviderReply

logger = logging.getLogger(__name__)

FIXTURE_VERSION = 1


@dataclass(frozen=True)
class Usage:
    input_tokens: int = 0
    output_tokens: int = 0
    search_calls: int = 0

    def __post_init__(self) -> None:
        for name in ("input_tokens", "output_tokens", "search_calls"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 0:
                raise ValueError(f"usage.{name} must be a non-negative integer, got {value!r}")

    def __add__(self, other: "Usage") -> "Usage":
        if not isinstance(other, Usage):
            return NotImplemented
        return Usage(
            self.input_tokens + other.input_tokens,
            self.output_tokens + other.output_tokens,
            self.search_calls + other.search_calls,
        )

    def to_dict(self) -> dict:
        return {
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "search_calls": self.search_calls,
        }

    @classmethod
    def from_dict(cls, data) -> "Usage":
        return cls(
            int(data.get("input_tokens", 0)),
            int(data.get("output_tokens", 0)),
            int(data.get("search_calls", 0)),
        )


@dataclass(frozen=True)
class CurationRequest:
    model_id: str
    system: str
    user: str
    output_schema: dict | None = field(default=None, hash=False)
    search_enabled: bool = True
    max_output_tokens: int = 4096

    def summary(self) -> dict:
        return {
            "model_id": self.model_id,
            "system": self.system,
            "user": self.user,
            "output_schema": self.output_schema,
            "search_enabled": self.search_enabled,
            "max_output_tokens": self.max_output_tokens,
        }


@dataclass(frozen=True)
class ProviderResponse:
    raw_text: str
    usage: Usage
    model_id: str


@runtime_checkable
class Provider(Protocol):
    def send(self, request: CurationRequest) -> ProviderResponse: ...


def request_key(request: CurationRequest) -> str:
    """Content hash of everything that determines a model reply.

    No canonicalization is applied to the prompt texts: a single changed
    space produces a different key.
    """
    payload = json.dumps(
        [
            request.model_id,
            request.system,
            request.user,
            request.output_schema,
            request.search_enabled,
            request.max_output_tokens,
        ],
        sort_keys=True,
        ensure_ascii=False,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


# -- output schema ----------------------------------------------------------------

_VALUE_SCHEMAS = {
    "string": {"type": "string"},
    "integer": {"type": "integer"},
    "year": {"type": "integer", "minimum": 1000, "maximum": 2100},
    "date": {"type": "string", "format": "date"},
    "boolean": {"type": "boolean"},
}


def build_output_schema(spec, evidence_urls: bool = False) -> dict:
    """JSON Schema for the per-entity reply: one ``{status, value}`` object per attribute.

    A ``found`` entry must carry a value; a ``not_found`` entry must not. The
    ``not_found`` branch only exists for attributes that allow it.
    """
    properties = {}
    for attr in spec.attributes:
        if attr.value_kind == "enum":
            value_schema = {"type": "string", "enum": list(attr.enum_choices)}
        else:
            value_schema = dict(_VALUE_SCHEMAS[attr.value_kind])
        found = {
            "type": "object",
            "properties": {"status": {"const": "found"}, "value": value_schema},
            "required": ["status", "value"],
            "additionalProperties": False,
        }
        if evidence_urls:
            found["properties"]["evidence_urls"] = {"type": "array", "items": {"type": "string"}}
        branches = [found]
        if attr.allow_not_found:
            not_found = {
                "type": "object",
                "properties": {"status": {"const": "not_found"}},
                "required": ["status"],
                "additionalProperties": False,
            }
            if evidence_urls:
                not_found["properties"]["evidence_urls"] = {"type": "array", "items": {"type": "string"}}
            branches.append(not_found)
        properties[attr.name] = {"anyOf": branches}
    return {
        "type": "object",
        "properties": properties,
        "required": [a.name for a in spec.attributes],
        "additionalProperties": False,
    }


# -- fixtures ---------------------------------------------------------------------


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def fixture_document(request: CurationRequest, response: ProviderResponse, payload: dict | None = None) -> dict:
    doc = {
        "version": FIXTURE_VERSION,
        "request_key": request_key(request),
        "request": request.summary(),
        "raw_text": response.raw_text,
        "usage": response.usage.to_dict(),
        "model_id": response.model_id,
    }
    if payload is not None:
        doc["payload"] = payload
    return doc


class ReplayProvider:
    """Serve recorded responses from ``<directory>/<request_key>.json``.

    The store is read once at construction and is read-only afterwards, so
    one instance can be shared by any number of worker threads.
    """

    name = "replay"

    def __init__(self, directory: str | os.PathLike):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise FileNotFoundError(f"fixture directory not found: {self.directory}")
        self._store: dict[str, dict] = {}
        for path in sorted(self.directory.glob("*.json")):
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
            self._store[path.stem] = doc
        logger.debug("loaded %d fixtures from %s", len(self._store), self.directory)

    def __len__(self) -> int:
        return len(self._store)

    def __contains__(self, key: str) -> bool:
        return key in self._store

    def send(self, request: CurationRequest) -> ProviderResponse:
        key = request_key(request)
        doc = self._store.get(key)
        if doc is None:
            raise FixtureMiss(key)
        try:
            return ProviderResponse(
                raw_text=doc["raw_text"],
                usage=Usage.from_dict(doc["usage"]),
                model_id=doc.get("model_id", request.model_id),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedProviderReply(f"fixture {key} is unreadable: {exc}") from None

    def identity(self) -> dict:
        return {"provider": self.name, "fixtures": str(self.directory), "count": len(self._store)}


class RecordingProvider:
    """Forward to ``inner`` and persist every successful exchange as a fixture.

    Writes go through a single lock so concurrent jobs never interleave on disk.
    """

    name = "record"

    def __init__(self, inner: Provider, directory: str | os.PathLike):
        self.inner = inner
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self.recorded: list[str] = []

    def send(self, request: CurationRequest) -> ProviderResponse:
        response = self.inner.send(request)
        payload = None
        build = getattr(self.inner, "build_payload", None)
        if callable(build):
            payload = build(request)
        doc = fixture_document(request, response, payload)
        text = json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
        with self._lock:
            _atomic_write_text(self.directory / f"{doc['request_key']}.json", text)
            self.recorded.append(doc["request_key"])
        return response

    def identity(self) -> dict:
        inner = getattr(self.inner, "identity", None)
        return {
            "provider": self.name,
            "fixtures": str(self.directory),
            "inner": inner() if callable(inner) else type(self.inner).__name__,
        }


class ScriptedProvider:
    """Return canned replies in order, regardless of the request.

    Used to author fixtures (wrapped in :class:`RecordingProvider`) and in
    tests. Each script item is either a raw text, a ``(raw_text, Usage)``
    pair, or an exception instance to raise.
    """

    name = "scripted"

    def __init__(self, script, default_usage: Usage = Usage()):
        self._script = list(script)
        self._default_usage = default_usage
        self._lock = threading.Lock()
        self.requests: list[CurationRequest] = []

    def send(self, request: CurationRequest) -> ProviderResponse:
        with self._lock:
            self.requests.append(request)
            if not self._script:
                raise FixtureMiss(request_key(request))
            item = self._script.pop(0)
        if isinstance(item, BaseException):
            raise item
        if isinstance(item, tuple):
            text, usage = item
        else:
            text, usage = item, self._default_usage
        return ProviderResponse(text, usage, request.model_id)

    def identity(self) -> dict:
        return {"provider": self.name}
