from __future__ import annotations

import json
import os

import httpx
import pytest

from webcurate.errors import (
    AuthFailure,
    FixtureMiss,
    MalformedProviderReply,
    NetworkTimeout,
    RateLimited,
    TransientServer,
)
from webcurate.gateway import (
    CurationRequest,
    RecordingProvider,
    ReplayProvider,
    ScriptedProvider,
    Usage,
    build_output_schema,
    request_key,
)
from webcurate.live import LiveProvider

from conftest import FIXTURES, load_task

REQ = CurationRequest("m-1", "system text", "user text", {"type": "object"}, True, 1000)


def test_request_key_stable_and_sensitive():
    assert request_key(REQ) == request_key(CurationRequest("m-1", "system text", "user text", {"type": "object"}, True, 1000))
    variants = [
        CurationRequest("m-2", "system text", "user text", {"type": "object"}, True, 1000),
        CurationRequest("m-1", "system text ", "user text", {"type": "object"}, True, 1000),
        CurationRequest("m-1", "system text", "user  text", {"type": "object"}, True, 1000),
        CurationRequest("m-1", "system text", "user text", {"type": "array"}, True, 1000),
        CurationRequest("m-1", "system text", "user text", {"type": "object"}, False, 1000),
        CurationRequest("m-1", "system text", "user text", {"type": "object"}, True, 1001),
    ]
    keys = {request_key(v) for v in variants}
    assert len(keys) == len(variants) and request_key(REQ) not in keys
    assert len(request_key(REQ)) == 64


def test_usage_addition():
    assert Usage(1, 2, 3) + Usage(10, 20, 30) == Usage(11, 22, 33)
    with pytest.raises(ValueError):
        Usage(-1, 0, 0)


def test_output_schema_shape():
    spec, _ = load_task("nobel_death")
    schema = build_output_schema(spec)
    assert schema["required"] == ["is_alive", "death_date"]
    branches = schema["properties"]["is_alive"]["anyOf"]
    assert branches[0]["properties"]["value"] == {"type": "boolean"}
    assert branches[1]["required"] == ["status"]
    with_urls = build_output_schema(spec, evidence_urls=True)
    assert "evidence_urls" in with_urls["properties"]["death_date"]["anyOf"][0]["properties"]


def test_replay_hit_and_miss(tmp_path):
    scripted = ScriptedProvider([("hello", Usage(5, 6, 1))])
    RecordingProvider(scripted, tmp_path).send(REQ)
    replay = ReplayProvider(tmp_path)
    assert len(replay) == 1 and request_key(REQ) in replay
    got = replay.send(REQ)
    assert (got.raw_text, got.usage) == ("hello", Usage(5, 6, 1))
    other = CurationRequest("m-1", "system text", "different", None, True, 1000)
    with pytest.raises(FixtureMiss) as info:
        replay.send(other)
    assert info.value.key == request_key(other)


def test_recording_writes_one_file_per_exchange(tmp_path):
    rec = RecordingProvider(ScriptedProvider(["a", "b"]), tmp_path)
    rec.send(REQ)
    second = CurationRequest("m-1", "s", "u", None, False, 10)
    rec.send(second)
    files = sorted(p.stem for p in tmp_path.glob("*.json"))
    assert files == sorted([request_key(REQ), request_key(second)])
    doc = json.loads((tmp_path / f"{request_key(second)}.json").read_text())
    assert doc["request"]["search_enabled"] is False and doc["raw_text"] == "b"


def test_bundled_fixture_keys_match_file_names():
    for directory in FIXTURES.iterdir():
        if not directory.is_dir():
            continue
        for path in directory.glob("*.json"):
            doc = json.loads(path.read_text(encoding="utf-8"))
            request = CurationRequest(**doc["request"])
            assert request_key(request) == path.stem == doc["request_key"]


def test_scripted_provider_raises_scripted_errors():
    p = ScriptedProvider([TransientServer("boom"), "ok"])
    with pytest.raises(TransientServer):
        p.send(REQ)
    assert p.send(REQ).raw_text == "ok"
    with pytest.raises(FixtureMiss):
        p.send(REQ)


# -- live provider over a mock transport -----------------------------------------------


def responses_reply(text: str, searches: int = 2) -> dict:
    output = [{"type": "web_search_call", "id": f"ws{i}"} for i in range(searches)]
    output.append({"type": "message", "content": [{"type": "output_text", "text": text}]})
    return {"output": output, "usage": {"input_tokens": 1200, "output_tokens": 80}}


def live_with(handler, vendor="openai-responses") -> LiveProvider:
    return LiveProvider(api_key="test-key", base_url="https://example.invalid/v1", vendor=vendor,
                        transport=httpx.MockTransport(handler))


def test_live_responses_adapter_round_trip():
    seen = {}

    def handler(request: httpx.Request) -> httpx.Response:
        seen["path"] = request.url.path
        seen["auth"] = request.headers["authorization"]
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json=responses_reply('{"x": 1}', searches=3))

    provider = live_with(handler)
    got = provider.send(REQ)
    assert got.raw_text == '{"x": 1}'
    assert got.usage == Usage(1200, 80, 3)
    assert seen["path"] == "/v1/responses"
    assert seen["auth"] == "Bearer test-key"
    assert seen["body"]["tools"] == [{"type": "web_search"}]
    assert seen["body"]["text"]["format"]["schema"] == {"type": "object"}


def test_live_payload_has_no_tools_when_search_disabled():
    bodies = []

    def handler(request):
        bodies.append(json.loads(request.content))
        return httpx.Response(200, json=responses_reply("{}", searches=0))

    no_search = CurationRequest("m-1", "s", "u", None, False, 100)
    live_with(handler).send(no_search)
    live_with(handler, "chat-completions").build_payload(no_search)
    assert "tools" not in bodies[0]
    assert "tools" not in live_with(handler, "chat-completions").build_payload(no_search)


def test_live_chat_adapter():
    def handler(request):
        assert request.url.path == "/v1/chat/completions"
        return httpx.Response(200, json={
            "choices": [{"message": {"content": "answer"}}],
            "usage": {"prompt_tokens": 7, "completion_tokens": 3},
        })

    got = live_with(handler, "chat-completions").send(REQ)
    assert got.raw_text == "answer" and got.usage == Usage(7, 3, 0)


@pytest.mark.parametrize(
    "response, error",
    [
        (httpx.Response(429, headers={"retry-after": "7"}), RateLimited),
        (httpx.Response(401), AuthFailure),
        (httpx.Response(403), AuthFailure),
        (httpx.Response(500), TransientServer),
        (httpx.Response(503), TransientServer),
        (httpx.Response(400, text="bad"), MalformedProviderReply),
        (httpx.Response(200, text="<html>"), MalformedProviderReply),
        (httpx.Response(200, json={"nothing": True}), MalformedProviderReply),
    ],
)
def test_live_status_mapping(response, error):
    with pytest.raises(error) as info:
        live_with(lambda request: response).send(REQ)
    if error is RateLimited:
        assert info.value.retry_after == 7.0


def test_live_timeout_maps_to_network_timeout():
    def handler(request):
        raise httpx.ReadTimeout("slow", request=request)

    with pytest.raises(NetworkTimeout):
        live_with(handler).send(REQ)


def test_live_requires_key(monkeypatch):
    monkeypatch.delenv("DP_API_KEY", raising=False)
    with pytest.raises(AuthFailure):
        LiveProvider()


def test_recording_live_stores_payload(tmp_path):
    rec = RecordingProvider(live_with(lambda r: httpx.Response(200, json=responses_reply("{}"))), tmp_path)
    rec.send(REQ)
    doc = json.loads(next(tmp_path.glob("*.json")).read_text())
    assert doc["payload"]["model"] == "m-1"


@pytest.mark.live
@pytest.mark.skipif(not os.environ.get("DP_API_KEY"), reason="live smoke test needs DP_API_KEY")
def test_live_smoke():
    provider = LiveProvider(vendor=os.environ.get("DP_API_VENDOR", "openai-responses"))
    request = CurationRequest(os.environ.get("DP_MODEL", "gpt-5-mini"), "Answer briefly.",
                              "What is the capital of France?", None, False, 64)
    got = provider.send(request)
    assert got.raw_text
