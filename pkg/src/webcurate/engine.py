"""Entity-parallel curation engine.

One independent job per entity: render the prompt, call the provider, parse
and validate the structured reply, retry where the policy allows. Jobs run on
a bounded thread pool behind a shared request limiter, and each finished
entity is checkpointed as its own atomically-renamed JSON file so that an
interrupted run can be resumed without repeating completed work.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
import random
import re
import threading
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable
from urllib.parse import quote

from .errors import (
    AuthFailure,
    ConfigHashMismatch,
    ExhaustedAttempts,
    InconsistentStatus,
    InvalidJson,
    MalformedProviderReply,
    NetworkTimeout,
    OutputError,
    ProviderError,
    RateLimited,
    SchemaViolation,
    TransientServer,
)
from .gateway import CurationRequest, Provider, Usage, _atomic_write_text, request_key
from .ledger import read_telemetry
from .taskconfig import EntityRecord, EntitySet, TaskSpec, parse_entity_set, render_prompt, run_identity, task_spec_from_dict

logger = logging.getLogger(__name__)

YEAR_MIN, YEAR_MAX = 1000, 2100
BACKOFF_BASE = 1.0
BACKOFF_FACTOR = 2.0
BACKOFF_CAP = 60.0
RATE_WINDOW = 60.0

CORRECTIVE_SUFFIX = (
    "\n\nYour previous reply was rejected ({error}). "
    "Reply again with only the JSON object described above, following the schema exactly."
)

MANIFEST = "manifest.json"
RESULTS = "results"
TELEMETRY = "telemetry.jsonl"
ENTITIES_COPY = "entities.csv"


def _now_iso() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


# -- results ----------------------------------------------------------------------


@dataclass(frozen=True)
class AttributeResult:
    attribute: str
    status: str
    value: Any = None
    evidence_urls: tuple[str, ...] = ()

    @property
    def found(self) -> bool:
        return self.status == "found"

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"status": self.status}
        if self.found:
            out["value"] = self.value
        if self.evidence_urls:
            out["evidence_urls"] = list(self.evidence_urls)
        return out


@dataclass
class EntityResult:
    entity_id: str
    attribute_results: list[AttributeResult]
    usage: Usage
    attempts: int
    finished_at: str = ""
    provenance: str = "model"

    def result_for(self, attribute: str) -> AttributeResult:
        for r in self.attribute_results:
            if r.attribute == attribute:
                return r
        raise KeyError(attribute)

    def to_dict(self) -> dict:
        return {
            "entity_id": self.entity_id,
            "attributes": {r.attribute: r.to_dict() for r in self.attribute_results},
            "usage": self.usage.to_dict(),
            "attempts": self.attempts,
            "finished_at": self.finished_at,
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EntityResult":
        results = [
            AttributeResult(name, cell["status"], cell.get("value"), tuple(cell.get("evidence_urls", ())))
            for name, cell in data["attributes"].items()
        ]
        return cls(
            entity_id=data["entity_id"],
            attribute_results=results,
            usage=Usage.from_dict(data["usage"]),
            attempts=int(data["attempts"]),
            finished_at=data.get("finished_at", ""),
            provenance=data.get("provenance", "model"),
        )


# -- structured output ------------------------------------------------------------

_DATE = re.compile(r"\d{4}-\d{2}-\d{2}\Z")
_FENCE = re.compile(r"\A```(?:json)?\s*\n(.*)\n```\s*\Z", re.S)


def _check_value(attr, value) -> Any:
    kind = attr.value_kind
    name = attr.name
    if kind == "string":
        if not isinstance(value, str) or not value.strip():
            raise SchemaViolation(name, "expected non-empty text")
        return value
    if kind in ("integer", "year"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise SchemaViolation(name, f"expected an integer, got {value!r}")
        if kind == "year" and not YEAR_MIN <= value <= YEAR_MAX:
            raise SchemaViolation(name, f"year {value} outside [{YEAR_MIN}, {YEAR_MAX}]")
        return value
    if kind == "date":
        if not isinstance(value, str) or not _DATE.match(value):
            raise SchemaViolation(name, f"expected a YYYY-MM-DD date, got {value!r}")
        try:
            dt.date.fromisoformat(value)
        except ValueError:
            raise SchemaViolation(name, f"{value!r} is not a calendar date") from None
        return value
    if kind == "boolean":
        if not isinstance(value, bool):
            raise SchemaViolation(name, f"expected true or false, got {value!r}")
        return value
    if kind == "enum":
        if value not in attr.enum_choices:
            raise SchemaViolation(name, f"{value!r} is not one of {list(attr.enum_choices)}")
        return value
    raise SchemaViolation(name, f"unsupported kind {kind}")  # pragma: no cover


def parse_structured_output(raw_text: str, spec: TaskSpec) -> list[AttributeResult]:
    """Validate a model reply against the task's output schema.

    Returns one :class:`AttributeResult` per attribute, in task order.
    """
    text = raw_text.strip()
    fenced = _FENCE.match(text)
    if fenced:
        text = fenced.group(1)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidJson(f"reply is not valid JSON: {exc.msg} at position {exc.pos}") from None
    if not isinstance(data, dict):
        raise InvalidJson("reply is not a JSON object")

    expected = spec.attribute_names
    for key in data:
        if key not in expected:
            raise SchemaViolation(str(key), "unexpected attribute")

    results = []
    for attr in spec.attributes:
        if attr.name not in data:
            raise SchemaViolation(attr.name, "missing from reply")
        cell = data[attr.name]
        if not isinstance(cell, dict):
            raise SchemaViolation(attr.name, "expected an object with status and value")
        extra = set(cell) - {"status", "value", "evidence_urls"}
        if extra:
            raise SchemaViolation(attr.name, f"unexpected keys {sorted(extra)}")
        urls = cell.get("evidence_urls") or []
        if not isinstance(urls, list) or not all(isinstance(u, str) for u in urls):
            raise SchemaViolation(attr.name, "evidence_urls must be a list of strings")
        status = cell.get("status")
        if status == "not_found":
            if not attr.allow_not_found:
                raise SchemaViolation(attr.name, "not_found is not allowed for this attribute")
            if cell.get("value") is not None:
                raise InconsistentStatus(attr.name)
            results.append(AttributeResult(attr.name, "not_found", None, tuple(urls)))
        elif status == "found":
            if cell.get("value") is None:
                raise SchemaViolation(attr.name, "status is found but no value given")
            value = _check_value(attr, cell["value"])
            results.append(AttributeResult(attr.name, "found", value, tuple(urls)))
        else:
            raise SchemaViolation(attr.name, f"status must be found or not_found, got {status!r}")
    return results


# -- retry policy ---------------------------------------------------------------


@dataclass(frozen=True)
class Retry:
    delay: float
    corrective: bool = False


@dataclass(frozen=True)
class Fail:
    reason: str


def backoff_delay(attempt: int, rng: random.Random | None = None) -> float:
    """Full-jitter exponential backoff: uniform over [0, min(cap, base * factor**(attempt-1))]."""
    ceiling = min(BACKOFF_CAP, BACKOFF_BASE * BACKOFF_FACTOR ** (attempt - 1))
    return (rng or random).uniform(0.0, ceiling)


def retry_policy(error: BaseException, attempt: int, rng: random.Random | None = None) -> Retry | Fail:
    if attempt < 1:
        attempt = 1
    if isinstance(error, RateLimited) and error.retry_after is not None:
        return Retry(float(error.retry_after))
    if isinstance(error, (RateLimited, TransientServer, NetworkTimeout)):
        return Retry(backoff_delay(attempt, rng))
    if isinstance(error, (OutputError, MalformedProviderReply)):
        return Retry(0.0, corrective=True)
    return Fail(f"{type(error).__name__}: {error}")


# -- rate limiting ----------------------------------------------------------------


class RateLimiter:
    """Cap request issuances at ``requests_per_minute`` in every 60-second window.

    Works as a token bucket whose tokens come back exactly one window after
    they were spent, which (unlike a continuously refilling bucket) also bounds
    bursts. ``clock`` and ``sleep`` are injectable for tests.
    """

    def __init__(
        self,
        requests_per_minute: int,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
        window: float = RATE_WINDOW,
    ):
        if requests_per_minute <= 0:
            raise ValueError("requests_per_minute must be positive")
        self.limit = requests_per_minute
        self.window = window
        self._clock = clock
        self._sleep = sleep
        self._issued: deque[float] = deque()
        self._lock = threading.Lock()
        self.issue_times: list[float] = []

    def acquire(self) -> float:
        with self._lock:
            while True:
                now = self._clock()
                horizon = now - self.window
                while self._issued and self._issued[0] <= horizon:
                    self._issued.popleft()
                if len(self._issued) < self.limit:
                    self._issued.append(now)
                    self.issue_times.append(now)
                    return now
                # waiters queue on the lock; clamp guards against float stalls
                self._sleep(max(self._issued[0] + self.window - now, 1e-6))


# -- telemetry --------------------------------------------------------------------


class TelemetryWriter:
    def __init__(self, path: Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def write(self, line: dict) -> None:
        text = json.dumps(line, sort_keys=True, ensure_ascii=False) + "\n"
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(text)
                fh.flush()


# -- single entity ----------------------------------------------------------------


def build_request(spec: TaskSpec, bundle, user: str | None = None) -> CurationRequest:
    """The provider request for a rendered prompt; ``user`` replaces the prompt text on retries."""
    return CurationRequest(
        model_id=spec.model_id,
        system=bundle.system,
        user=bundle.user if user is None else user,
        output_schema=bundle.output_schema,
        search_enabled=spec.search_enabled,
        max_output_tokens=spec.max_output_tokens,
    )


def curate_entity(
    spec: TaskSpec,
    record: EntityRecord,
    provider: Provider,
    *,
    limiter: RateLimiter | None = None,
    sleep: Callable[[float], None] = time.sleep,
    rng: random.Random | None = None,
    telemetry: TelemetryWriter | None = None,
) -> EntityResult:
    """Curate one entity.

    Model replies that fail validation and transport failures are counted
    separately, each capped at ``spec.max_attempts``. Usage is summed over
    every reply received, including the rejected ones.
    """
    bundle = render_prompt(spec, record)
    replies = 0
    transport_failures = 0
    usage = Usage()
    user = bundle.user
    last_error: Exception | None = None

    while True:
        request = build_request(spec, bundle, user)
        if limiter is not None:
            limiter.acquire()
        try:
            response = provider.send(request)
        except ProviderError as exc:
            last_error = exc
            transport_failures += 1
            action = retry_policy(exc, transport_failures, rng)
            if isinstance(action, Fail) and isinstance(exc, AuthFailure):
                raise
            if isinstance(action, Fail) or transport_failures >= spec.max_attempts:
                raise ExhaustedAttempts(record.entity_id, exc, replies + transport_failures, usage) from exc
            logger.info("entity %s: %s, retrying in %.2fs", record.entity_id, exc, action.delay)
            if action.delay > 0:
                sleep(action.delay)
            if action.corrective:
                user = bundle.user + CORRECTIVE_SUFFIX.format(error=exc)
            continue

        replies += 1
        usage = usage + response.usage
        try:
            results = parse_structured_output(response.raw_text, spec)
            outcome = "ok"
        except OutputError as exc:
            results = None
            outcome = type(exc).__name__
            last_error = exc
        if telemetry is not None:
            telemetry.write({
                "entity_id": record.entity_id,
                "attempt": replies,
                "request_key": request_key(request),
                "model_id": response.model_id,
                "search_enabled": request.search_enabled,
                "outcome": outcome,
                **response.usage.to_dict(),
            })
        if results is not None:
            return EntityResult(record.entity_id, results, usage, replies, _now_iso(), "model")
        if replies >= spec.max_attempts:
            raise ExhaustedAttempts(record.entity_id, last_error, replies, usage)
        logger.info("entity %s: rejected reply (%s), corrective retry", record.entity_id, last_error)
        user = bundle.user + CORRECTIVE_SUFFIX.format(error=last_error)


# -- run directory ----------------------------------------------------------------


def entity_filename(entity_id: str) -> str:
    return quote(entity_id, safe="")


def result_path(run_dir: Path, entity_id: str) -> Path:
    return Path(run_dir) / RESULTS / f"{entity_filename(entity_id)}.json"


def failed_path(run_dir: Path, entity_id: str) -> Path:
    return Path(run_dir) / RESULTS / f"{entity_filename(entity_id)}.failed.json"


def write_json_atomic(path: Path, data: dict) -> None:
    _atomic_write_text(Path(path), json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n")


def read_manifest(run_dir: Path) -> dict:
    with open(Path(run_dir) / MANIFEST, encoding="utf-8") as fh:
        return json.load(fh)


def load_run_inputs(run_dir: Path) -> tuple[TaskSpec, EntitySet, dict]:
    """Task spec and entity table stored in a run directory, verified against the manifest hash."""
    run_dir = Path(run_dir)
    manifest = read_manifest(run_dir)
    spec = task_spec_from_dict(manifest["task"])
    entities = parse_entity_set((run_dir / ENTITIES_COPY).read_text(encoding="utf-8"), spec)
    actual = run_identity(spec, entities)
    if actual != manifest["config_hash"]:
        raise ConfigHashMismatch(actual, manifest["config_hash"])
    return spec, entities, manifest


@dataclass
class RunState:
    run_dir: Path
    completed: set[str]
    pending: list[str]
    failed: set[str] = field(default_factory=set)


def load_run_state(run_dir: Path, entities: EntitySet, retry_failed: bool = True) -> RunState:
    completed, failed, pending = set(), set(), []
    for eid in entities.ids:
        if result_path(run_dir, eid).exists():
            completed.add(eid)
        elif failed_path(run_dir, eid).exists() and not retry_failed:
            completed.add(eid)
            failed.add(eid)
        else:
            pending.append(eid)
    return RunState(Path(run_dir), completed, pending, failed)


@dataclass
class RunSummary:
    done: int
    failed: int
    usage: Usage
    wall_time: float
    calls: int = 0
    failed_ids: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "done": self.done,
            "failed": self.failed,
            "usage": self.usage.to_dict(),
            "wall_time": round(self.wall_time, 3),
            "calls": self.calls,
            "failed_ids": self.failed_ids,
        }


class _CallCounter:
    def __init__(self, inner: Provider):
        self.inner = inner
        self.calls = 0
        self._lock = threading.Lock()

    def send(self, request):
        with self._lock:
            self.calls += 1
        return self.inner.send(request)


def _provider_identity(provider) -> dict:
    ident = getattr(provider, "identity", None)
    return ident() if callable(ident) else {"provider": type(provider).__name__}


def prepare_run_dir(spec: TaskSpec, entities: EntitySet, run_dir: Path, provider=None) -> dict:
    """Create or validate ``run_dir``; returns the manifest."""
    run_dir = Path(run_dir)
    (run_dir / RESULTS).mkdir(parents=True, exist_ok=True)
    config_hash = run_identity(spec, entities)
    manifest_file = run_dir / MANIFEST
    if manifest_file.exists():
        manifest = read_manifest(run_dir)
        if manifest.get("config_hash") != config_hash:
            raise ConfigHashMismatch(config_hash, manifest.get("config_hash", ""))
        manifest["resumed_at"] = _now_iso()
    else:
        manifest = {
            "config_hash": config_hash,
            "task_name": spec.task_name,
            "task": spec.to_dict(),
            "entity_count": len(entities),
            "created_at": _now_iso(),
        }
        _atomic_write_text(run_dir / ENTITIES_COPY, entities.to_csv_text())
    if provider is not None:
        manifest["provider"] = _provider_identity(provider)
    manifest["status"] = "running"
    write_json_atomic(manifest_file, manifest)
    return manifest


def run_task(
    spec: TaskSpec,
    entities: EntitySet,
    provider: Provider,
    run_dir: str | Path,
    *,
    limiter: RateLimiter | None = None,
    clock: Callable[[], float] = time.monotonic,
    sleep: Callable[[float], None] = time.sleep,
    rng: random.Random | None = None,
    retry_failed: bool = True,
) -> RunSummary:
    """Curate every pending entity of ``entities`` into ``run_dir``.

    Entities with a result file are skipped, so calling this again on an
    interrupted run resumes it. Previously failed entities are retried unless
    ``retry_failed`` is false.
    """
    started = clock()
    run_dir = Path(run_dir)
    manifest = prepare_run_dir(spec, entities, run_dir, provider)
    state = load_run_state(run_dir, entities, retry_failed)
    records = entities.by_id()
    limiter = limiter or RateLimiter(spec.requests_per_minute, clock=clock, sleep=sleep)
    telemetry = TelemetryWriter(run_dir / TELEMETRY)
    counter = _CallCounter(provider)
    logger.info("run %s: %d pending, %d already settled", spec.task_name, len(state.pending), len(state.completed))

    def job(eid: str) -> str:
        try:
            result = curate_entity(
                spec, records[eid], counter, limiter=limiter, sleep=sleep, rng=rng, telemetry=telemetry
            )
        except ExhaustedAttempts as exc:
            write_json_atomic(failed_path(run_dir, eid), {
                "entity_id": eid,
                "error": f"{type(exc.last_error).__name__}: {exc.last_error}",
                "attempts": exc.attempts,
                "usage": (exc.usage or Usage()).to_dict(),
                "finished_at": _now_iso(),
            })
            logger.warning("entity %s failed: %s", eid, exc)
            return "failed"
        write_json_atomic(result_path(run_dir, eid), result.to_dict())
        failed_path(run_dir, eid).unlink(missing_ok=True)
        return "done"

    if state.pending:
        pool = ThreadPoolExecutor(max_workers=spec.max_parallel, thread_name_prefix="curate")
        try:
            futures = [pool.submit(job, eid) for eid in state.pending]
            for fut in as_completed(futures):
                fut.result()
        except BaseException:
            pool.shutdown(wait=True, cancel_futures=True)
            raise
        pool.shutdown(wait=True)

    final = load_run_state(run_dir, entities, retry_failed=False)
    failed_ids = [eid for eid in entities.ids if eid in final.failed]
    total = Usage()
    for line in read_telemetry(run_dir / TELEMETRY):
        total = total + Usage.from_dict(line)
    summary = RunSummary(
        done=len(final.completed) - len(final.failed),
        failed=len(final.failed),
        usage=total,
        wall_time=clock() - started,
        calls=counter.calls,
        failed_ids=failed_ids,
    )
    manifest["status"] = "complete" if not final.pending else "incomplete"
    manifest["updated_at"] = _now_iso()
    manifest["counts"] = {"done": summary.done, "failed": summary.failed}
    write_json_atomic(run_dir / MANIFEST, manifest)
    return summary
